#include "t2iopt/pattern_catalog.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace t2i {

using nlohmann::json;

PatternCatalog PatternCatalog::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("pattern catalog not found: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw SchemaError("pattern catalog is not valid JSON");
    if (!j.contains("version") || !j.contains("patterns") || !j["patterns"].is_array())
        throw SchemaError("pattern catalog: missing version or patterns array");

    PatternCatalog catalog;
    std::set<int> ids;
    for (const auto& e : j["patterns"]) {
        PatternEntry entry;
        try {
            entry.id = e.at("id").get<int>();
            entry.name = e.at("name").get<std::string>();
            auto cat = aspect_from_name(e.at("category").get<std::string>());
            if (!cat) throw SchemaError("pattern catalog: unknown category in entry " + entry.name);
            entry.category = *cat;
            entry.keywords = e.at("keywords").get<std::vector<std::string>>();
            entry.strategy_text = e.at("strategy").get<std::string>();
            entry.example_before = e.at("example").at("before").get<std::string>();
            entry.example_after = e.at("example").at("after").get<std::string>();
        } catch (const json::exception& ex) {
            throw SchemaError(std::string("pattern catalog: malformed entry: ") + ex.what());
        }
        if (entry.strategy_text.empty())
            throw SchemaError("pattern catalog: empty strategy_text in " + entry.name);
        if (!ids.insert(entry.id).second)
            throw SchemaError("pattern catalog: duplicate id " + std::to_string(entry.id));
        catalog.entries_.push_back(std::move(entry));
    }
    if (catalog.entries_.size() != 35)
        throw CountMismatch("pattern catalog: expected 35 entries, got " +
                            std::to_string(catalog.entries_.size()));
    return catalog;
}

std::vector<const PatternEntry*> PatternCatalog::match(const ErrorRecord& error) const {
    auto tokens = tokenize(error.explanation);
    std::set<std::string> tokset(tokens.begin(), tokens.end());

    std::vector<std::pair<int, const PatternEntry*>> scored;
    for (const auto& entry : entries_) {
        if (entry.category != error.category) continue;
        int overlap = 0;
        for (const auto& kw : entry.keywords)
            if (tokset.count(to_lower(kw))) ++overlap;
        if (overlap > 0) scored.emplace_back(overlap, &entry);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->id < b.second->id;
    });
    std::vector<const PatternEntry*> out;
    out.reserve(scored.size());
    for (const auto& [ov, e] : scored) out.push_back(e);
    return out;
}

}  // namespace t2i
