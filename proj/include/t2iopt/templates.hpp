#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "t2iopt/common.hpp"

namespace t2i {

// Plain-text agent instruction templates with {{placeholder}} substitution.
// Templates are data: users edit the asset files, not the code.
class TemplateSet {
public:
    // Loads every *.txt under the directory, keyed by stem.
    static TemplateSet load_dir(const std::filesystem::path& dir);

    // Throws SchemaError on an unknown template or an unresolved placeholder.
    std::string expand(const std::string& name,
                       const std::map<std::string, std::string>& values) const;

    bool has(const std::string& name) const { return templates_.count(name) > 0; }

    void set(std::string name, std::string body) { templates_[std::move(name)] = std::move(body); }

private:
    std::map<std::string, std::string> templates_;
};

// One-off substitution used by TemplateSet and tests.
std::string substitute_placeholders(const std::string& body,
                                    const std::map<std::string, std::string>& values);

}  // namespace t2i
