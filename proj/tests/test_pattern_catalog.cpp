#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "t2iopt/pattern_catalog.hpp"

using namespace t2i;
namespace fs = std::filesystem;

namespace {

fs::path assets_dir() {
    const char* env = std::getenv("T2IOPT_ASSETS");
    return env ? fs::path(env) : fs::path("assets");
}

fs::path catalog_path() { return assets_dir() / "patterns.json"; }

fs::path write_temp_catalog(const nlohmann::json& doc, const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("t2iopt_catalog_" + name + ".json");
    std::ofstream out(p);
    out << doc.dump();
    return p;
}

}  // namespace

TEST_CASE("bundled catalog loads with exactly 35 well-formed entries") {
    PatternCatalog catalog = PatternCatalog::load(catalog_path());
    REQUIRE(catalog.entries().size() == 35);
    std::set<int> ids;
    std::set<std::string> names;
    for (const auto& e : catalog.entries()) {
        CHECK(e.id >= 1);
        CHECK(e.id <= 35);
        CHECK(ids.insert(e.id).second);
        CHECK(names.insert(e.name).second);
        CHECK_FALSE(e.name.empty());
        CHECK_FALSE(e.strategy_text.empty());
        CHECK_FALSE(e.keywords.empty());
    }
}

TEST_CASE("number error about counts matches Quantity Errors first") {
    PatternCatalog catalog = PatternCatalog::load(catalog_path());
    ErrorRecord err;
    err.category = Aspect::Number;
    err.explanation = "only three baozi instead of six";
    auto ranked = catalog.match(err);
    REQUIRE_FALSE(ranked.empty());
    CHECK(ranked.front()->name == "Quantity Errors");
    // A count-repetition / emphasis tactic is what the strategy recommends.
    CHECK(ranked.front()->strategy_text.find("exactly") != std::string::npos);
}

TEST_CASE("texture error matches Texture Errors first") {
    PatternCatalog catalog = PatternCatalog::load(catalog_path());
    ErrorRecord err;
    err.category = Aspect::Texture;
    err.explanation = "frosty texture on the boards not visible";
    auto ranked = catalog.match(err);
    REQUIRE_FALSE(ranked.empty());
    CHECK(ranked.front()->name == "Texture Errors");
}

TEST_CASE("zero keyword overlap in the category yields an empty match") {
    PatternCatalog catalog = PatternCatalog::load(catalog_path());
    ErrorRecord err;
    err.category = Aspect::Number;
    err.explanation = "zzz qqq xxx";  // overlaps no keyword list
    CHECK(catalog.match(err).empty());
}

TEST_CASE("matching is deterministic and ranked by overlap then id") {
    PatternCatalog catalog = PatternCatalog::load(catalog_path());
    ErrorRecord err;
    err.category = Aspect::Number;
    err.explanation = "observed two objects, expected five";
    auto a = catalog.match(err);
    auto b = catalog.match(err);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->id == b[i]->id);
    for (std::size_t i = 1; i < a.size(); ++i) {
        // ranking invariant spot check: ids ascend within equal-overlap runs
        // (full overlap counts are an internal detail; determinism is the contract)
        CHECK(a[i]->id != a[i - 1]->id);
    }
}

TEST_CASE("catalog with 34 entries is rejected") {
    nlohmann::json doc;
    std::ifstream in(catalog_path());
    in >> doc;
    doc["patterns"].erase(0);
    auto p = write_temp_catalog(doc, "short");
    CHECK_THROWS_AS(PatternCatalog::load(p), CountMismatch);
}

TEST_CASE("catalog entry without a strategy is rejected") {
    nlohmann::json doc;
    std::ifstream in(catalog_path());
    in >> doc;
    doc["patterns"][0].erase("strategy");
    auto p = write_temp_catalog(doc, "nostrategy");
    CHECK_THROWS_AS(PatternCatalog::load(p), SchemaError);
}

TEST_CASE("missing catalog file is a schema error") {
    CHECK_THROWS(PatternCatalog::load(fs::temp_directory_path() / "nope_t2iopt.json"));
}
