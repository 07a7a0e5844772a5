#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2iopt/optimizer.hpp"

namespace t2i {

struct RunEvent {
    long seq = 0;
    std::string kind;
    nlohmann::json payload;
};

// Sortable run identifier: millisecond timestamp + seed-derived suffix.
std::string new_run_id(long seed);

// Append-only JSONL event log; one writer, each line flushed before the
// pipeline takes its next step.
class RunLog {
public:
    explicit RunLog(const std::filesystem::path& run_dir);

    void append(const std::string& kind, const nlohmann::json& payload);
    long next_seq() const { return next_seq_; }

    // Loads every event. A truncated trailing line is dropped through `warn`;
    // corruption anywhere earlier throws CorruptLog.
    static std::vector<RunEvent> read(const std::filesystem::path& run_dir,
                                      const std::function<void(const std::string&)>& warn = nullptr);

    static std::filesystem::path log_path(const std::filesystem::path& run_dir);

private:
    std::ofstream out_;
    long next_seq_ = 0;
};

bool run_finalized(const std::vector<RunEvent>& events);

// Rebuilds the optimizer state recorded by the most recent iteration (or the
// initial state when no iteration completed). Throws EmptyRun when the log
// carries no state yet and CorruptLog on a finalized run.
OptimizeState resume_state(const std::vector<RunEvent>& events);

// One row per (iteration, candidate): seeded random Gaussian 2-D projection
// of the candidate embedding, cluster label, score, cluster posterior, and a
// sampled flag. Throws EmptyRun when the log holds no iteration events.
void export_clusters(const std::vector<RunEvent>& events, const std::filesystem::path& out_csv,
                     long seed);

}  // namespace t2i
