#include "t2iopt/run_log.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

namespace t2i {

using nlohmann::json;

std::string new_run_id(long seed) {
    auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    std::ostringstream out;
    out << std::hex << now << "-"
        << sha256_hex(std::to_string(seed) + std::to_string(now)).substr(0, 8);
    return out.str();
}

std::filesystem::path RunLog::log_path(const std::filesystem::path& run_dir) {
    return run_dir / "run.jsonl";
}

RunLog::RunLog(const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    // Continue the sequence when appending to an existing log.
    if (std::filesystem::exists(log_path(run_dir))) {
        auto events = read(run_dir);
        if (!events.empty()) next_seq_ = events.back().seq + 1;
    }
    out_.open(log_path(run_dir), std::ios::app);
    if (!out_) throw PreconditionError("run log: cannot open " + log_path(run_dir).string());
}

void RunLog::append(const std::string& kind, const json& payload) {
    json line = {{"seq", next_seq_++}, {"kind", kind}, {"payload", payload}};
    out_ << line.dump() << "\n";
    out_.flush();
}

std::vector<RunEvent> RunLog::read(const std::filesystem::path& run_dir,
                                   const std::function<void(const std::string&)>& warn) {
    std::ifstream in(log_path(run_dir));
    if (!in) throw CorruptLog("run log: cannot open " + log_path(run_dir).string());

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);

    std::vector<RunEvent> events;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        json parsed;
        try {
            parsed = json::parse(lines[i]);
            if (!parsed.contains("seq") || !parsed.contains("kind") || !parsed.contains("payload"))
                throw CorruptLog("missing field");
        } catch (const std::exception& e) {
            if (i + 1 == lines.size()) {
                // An interrupted writer can leave a truncated final line.
                if (warn) warn("run log: dropping truncated trailing line");
                break;
            }
            throw CorruptLog("run log: unreadable line " + std::to_string(i + 1) + ": " + e.what());
        }
        RunEvent event{parsed["seq"].get<long>(), parsed["kind"].get<std::string>(),
                       parsed["payload"]};
        if (!events.empty() && event.seq != events.back().seq + 1)
            throw CorruptLog("run log: sequence gap at line " + std::to_string(i + 1));
        events.push_back(std::move(event));
    }
    return events;
}

bool run_finalized(const std::vector<RunEvent>& events) {
    for (const auto& e : events)
        if (e.kind == "final") return true;
    return false;
}

OptimizeState resume_state(const std::vector<RunEvent>& events) {
    if (run_finalized(events)) throw CorruptLog("resume: run already finalized");
    const json* state = nullptr;
    for (const auto& e : events) {
        if (e.kind == "state_init") state = &e.payload;
        if (e.kind == "iteration" && e.payload.contains("state")) state = &e.payload["state"];
    }
    if (!state) throw EmptyRun("resume: log holds no optimizer state");
    return OptimizeState::from_json(*state);
}

void export_clusters(const std::vector<RunEvent>& events, const std::filesystem::path& out_csv,
                     long seed) {
    std::vector<const json*> iterations;
    for (const auto& e : events)
        if (e.kind == "iteration") iterations.push_back(&e.payload);
    if (iterations.empty()) throw EmptyRun("export: log holds no iteration events");

    // One fixed Gaussian projection for the whole run, seeded for determinism.
    std::size_t dim = (*iterations.front())["embeddings"][0].size();
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> rx(dim), ry(dim);
    for (std::size_t i = 0; i < dim; ++i) rx[i] = gauss(rng);
    for (std::size_t i = 0; i < dim; ++i) ry[i] = gauss(rng);

    std::ofstream out(out_csv);
    if (!out) throw PreconditionError("export: cannot open " + out_csv.string());
    out << "iteration,candidate,x,y,cluster,score,cluster_posterior,sampled\n";
    out.precision(17);
    for (const json* it : iterations) {
        const json& reports = (*it)["reports"];
        const json& labels = (*it)["labels"];
        const json& posteriors = (*it)["posteriors"];
        const json& embeddings = (*it)["embeddings"];
        std::vector<int> sampled = (*it)["sampled"].get<std::vector<int>>();
        for (std::size_t i = 0; i < reports.size(); ++i) {
            std::vector<double> v = embeddings[i].get<std::vector<double>>();
            double x = 0.0, y = 0.0;
            for (std::size_t d = 0; d < v.size() && d < dim; ++d) {
                x += v[d] * rx[d];
                y += v[d] * ry[d];
            }
            int cluster = labels[i].get<int>();
            int candidate = reports[i]["candidate"].get<int>();
            bool was_sampled =
                std::find(sampled.begin(), sampled.end(), candidate) != sampled.end();
            out << (*it)["iteration"].get<int>() << "," << candidate << "," << x << "," << y << ","
                << cluster << "," << reports[i]["average"].get<double>() << ","
                << posteriors[cluster].get<double>() << "," << (was_sampled ? "true" : "false")
                << "\n";
        }
    }
}

}  // namespace t2i
