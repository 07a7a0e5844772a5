#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "t2iopt/run_log.hpp"
#include "t2iopt/synthetic_agents.hpp"
#include "t2iopt/synthetic_env.hpp"

using namespace t2i;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("t2iopt_log_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
    std::ifstream in(file);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

void write_lines(const std::filesystem::path& dir, const std::vector<std::string>& lines) {
    std::filesystem::create_directories(dir);
    std::ofstream out(RunLog::log_path(dir));
    for (const auto& l : lines) out << l << "\n";
}

const std::filesystem::path assets_dir() {
    const char* env = std::getenv("T2IOPT_ASSETS");
    return env ? std::filesystem::path(env) : std::filesystem::path("assets");
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.n_candidates = 6;
    cfg.k_clusters = 3;
    cfg.m_samples = 2;
    cfg.max_iterations = 6;
    return cfg;
}

// Runs the worked single-error task end to end, logging every pipeline event,
// and returns the run directory. Fully deterministic.
std::filesystem::path golden_run(const std::string& tag) {
    auto run_dir = fresh_dir("golden_" + tag);
    auto store_dir = fresh_dir("golden_store_" + tag);
    ArtifactStore store(store_dir);
    synth::SyntheticTask task = synth::baozi_task();
    synth::SyntheticImageBackend t2i(store, task);
    synth::SyntheticAgentBackend agents(store);
    MockEmbedBackend embed;
    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");

    RunLog log(run_dir);
    Optimizer opt(agents, t2i, embed, templates, nullptr, small_config());
    opt.on_event = [&](const std::string& kind, const json& payload) {
        log.append(kind, payload);
    };
    ErrorAnalyzer analyzer(agents, templates);
    opt.optimize(task.prompt, analyzer);
    return run_dir;
}

}  // namespace

TEST_CASE("run ids embed the seed") {
    std::string a = new_run_id(1);
    std::string b = new_run_id(2);
    CHECK_FALSE(a.empty());
    CHECK(a != b);
}

TEST_CASE("events round-trip and the sequence survives reopening") {
    auto dir = fresh_dir("roundtrip");
    {
        RunLog log(dir);
        log.append("run_start", {{"seed", 7}});
        log.append("note", {{"text", "hello"}});
        CHECK(log.next_seq() == 2);
    }
    auto events = RunLog::read(dir);
    REQUIRE(events.size() == 2);
    CHECK(events[0].seq == 0);
    CHECK(events[0].kind == "run_start");
    CHECK(events[0].payload == json{{"seed", 7}});
    CHECK(events[1].seq == 1);

    {
        RunLog reopened(dir);
        CHECK(reopened.next_seq() == 2);
        reopened.append("note", {{"text", "again"}});
    }
    events = RunLog::read(dir);
    REQUIRE(events.size() == 3);
    CHECK(events[2].seq == 2);
}

TEST_CASE("a truncated trailing line is dropped with a warning") {
    auto dir = fresh_dir("truncated");
    {
        RunLog log(dir);
        log.append("run_start", {{"seed", 7}});
        log.append("note", {{"text", "ok"}});
    }
    {
        std::ofstream out(RunLog::log_path(dir), std::ios::app);
        out << R"({"seq":2,"kind":"note","payl)";  // writer died mid-line
    }
    std::vector<std::string> warnings;
    auto events = RunLog::read(dir, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(events.size() == 2);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("truncated") != std::string::npos);
}

TEST_CASE("corruption before the end of the log is fatal") {
    auto dir = fresh_dir("corrupt");
    {
        RunLog log(dir);
        log.append("a", {{"i", 0}});
        log.append("b", {{"i", 1}});
        log.append("c", {{"i", 2}});
    }
    auto lines = read_lines(RunLog::log_path(dir));
    REQUIRE(lines.size() == 3);

    SUBCASE("mangled middle line") {
        lines[1] = lines[1].substr(0, lines[1].size() / 2);
        write_lines(dir, lines);
        CHECK_THROWS_AS(RunLog::read(dir), CorruptLog);
    }

    SUBCASE("sequence gap") {
        std::vector<std::string> gapped = {lines[0], lines[2]};  // seq 0 then seq 2
        write_lines(dir, gapped);
        CHECK_THROWS_AS(RunLog::read(dir), CorruptLog);
    }
}

TEST_CASE("resume refuses finalized or stateless logs") {
    auto dir = fresh_dir("resume_guards");
    {
        RunLog log(dir);
        log.append("run_start", {{"seed", 7}});
    }
    CHECK_THROWS_AS(resume_state(RunLog::read(dir)), EmptyRun);
    {
        RunLog log(dir);
        log.append("final", {{"final_score", 5.0}});
    }
    CHECK(run_finalized(RunLog::read(dir)));
    CHECK_THROWS_AS(resume_state(RunLog::read(dir)), CorruptLog);
}

TEST_CASE("an interrupted run resumes to a byte-identical event stream") {
    auto golden_dir = golden_run("resume");
    auto golden_lines = read_lines(RunLog::log_path(golden_dir));
    auto golden_events = RunLog::read(golden_dir);
    REQUIRE(run_finalized(golden_events));

    // Cut the log after every completed iteration and replay the remainder.
    std::vector<std::size_t> cut_points;
    for (std::size_t i = 0; i < golden_events.size(); ++i)
        if (golden_events[i].kind == "iteration") cut_points.push_back(i + 1);
    REQUIRE_FALSE(cut_points.empty());

    int cut_no = 0;
    for (std::size_t cut : cut_points) {
        auto dir = fresh_dir("resume_cut_" + std::to_string(cut_no));
        write_lines(dir, std::vector<std::string>(golden_lines.begin(),
                                                  golden_lines.begin() + static_cast<long>(cut)));

        OptimizeState state = resume_state(RunLog::read(dir));

        auto store_dir = fresh_dir("resume_store_" + std::to_string(cut_no));
        ArtifactStore store(store_dir);
        synth::SyntheticTask task = synth::baozi_task();
        synth::SyntheticImageBackend t2i(store, task);
        synth::SyntheticAgentBackend agents(store);
        MockEmbedBackend embed;
        TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");

        RunLog log(dir);
        Optimizer opt(agents, t2i, embed, templates, nullptr, small_config());
        opt.on_event = [&](const std::string& kind, const json& payload) {
            log.append(kind, payload);
        };
        ErrorAnalyzer analyzer(agents, templates);
        opt.optimize_from_state(std::move(state), analyzer);

        CHECK(read_lines(RunLog::log_path(dir)) == golden_lines);
        ++cut_no;
    }
}

TEST_CASE("cluster export is one row per scored candidate and deterministic") {
    auto run_dir = golden_run("export");
    auto events = RunLog::read(run_dir);

    std::size_t expected_rows = 0;
    std::vector<std::size_t> sampled_counts;
    for (const auto& e : events)
        if (e.kind == "iteration") {
            expected_rows += e.payload.at("reports").size();
            sampled_counts.push_back(e.payload.at("sampled").size());
        }
    REQUIRE(expected_rows > 0);

    auto csv_a = fresh_dir("export_out") / "clusters.csv";
    std::filesystem::create_directories(csv_a.parent_path());
    export_clusters(events, csv_a, 7);
    auto lines = read_lines(csv_a);
    REQUIRE_FALSE(lines.empty());
    CHECK(lines[0] == "iteration,candidate,x,y,cluster,score,cluster_posterior,sampled");
    CHECK(lines.size() == expected_rows + 1);

    // Sampled flags per iteration match the recorded sampled sets.
    std::map<int, std::size_t> flagged;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::istringstream row(lines[i]);
        std::string field;
        std::getline(row, field, ',');
        int iteration = std::stoi(field);
        if (lines[i].size() >= 5 && lines[i].substr(lines[i].size() - 4) == "true")
            ++flagged[iteration];
    }
    std::size_t idx = 0;
    for (const auto& e : events)
        if (e.kind == "iteration") {
            int it = e.payload.at("iteration").get<int>();
            CHECK(flagged[it] == sampled_counts[idx]);
            ++idx;
        }

    auto csv_b = csv_a.parent_path() / "clusters_b.csv";
    export_clusters(events, csv_b, 7);
    CHECK(read_lines(csv_b) == lines);

    CHECK_THROWS_AS(export_clusters({}, csv_b, 7), EmptyRun);
}
