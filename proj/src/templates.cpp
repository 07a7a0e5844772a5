#include "t2iopt/templates.hpp"

#include <fstream>
#include <sstream>

namespace t2i {

namespace fs = std::filesystem;

std::string substitute_placeholders(const std::string& body,
                                    const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(body.size());
    std::size_t pos = 0;
    while (pos < body.size()) {
        std::size_t open = body.find("{{", pos);
        if (open == std::string::npos) {
            out.append(body, pos, std::string::npos);
            break;
        }
        std::size_t close = body.find("}}", open + 2);
        if (close == std::string::npos) {
            out.append(body, pos, std::string::npos);
            break;
        }
        out.append(body, pos, open - pos);
        std::string key = body.substr(open + 2, close - open - 2);
        auto it = values.find(key);
        if (it == values.end())
            throw SchemaError("template placeholder {{" + key + "}} has no value");
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

TemplateSet TemplateSet::load_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw SchemaError("template directory not found: " + dir.string());
    TemplateSet set;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::stringstream ss;
        ss << in.rdbuf();
        set.templates_[entry.path().stem().string()] = ss.str();
    }
    if (set.templates_.empty()) throw SchemaError("no templates in " + dir.string());
    return set;
}

std::string TemplateSet::expand(const std::string& name,
                                const std::map<std::string, std::string>& values) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw SchemaError("unknown template: " + name);
    return substitute_placeholders(it->second, values);
}

}  // namespace t2i
