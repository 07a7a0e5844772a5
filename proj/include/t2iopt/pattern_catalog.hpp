#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "t2iopt/error_types.hpp"

namespace t2i {

struct PatternEntry {
    int id = 0;                          // 1..35
    std::string name;                    // e.g. "Quantity Errors"
    Aspect category = Aspect::Existence;
    std::vector<std::string> keywords;
    std::string strategy_text;
    std::string example_before;
    std::string example_after;
};

class PatternCatalog {
public:
    // Parses and schema-validates the bundled JSON catalog; exactly 35 entries.
    static PatternCatalog load(const std::filesystem::path& path);

    // Entries of the error's category ranked by keyword-overlap count
    // descending, ties by id. Zero-overlap entries are dropped, so the result
    // is empty when nothing in the category matches.
    std::vector<const PatternEntry*> match(const ErrorRecord& error) const;

    const std::vector<PatternEntry>& entries() const { return entries_; }

private:
    std::vector<PatternEntry> entries_;
};

}  // namespace t2i
