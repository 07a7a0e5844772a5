#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2iopt/backends.hpp"
#include "t2iopt/clustering.hpp"
#include "t2iopt/error_analysis.hpp"
#include "t2iopt/pattern_catalog.hpp"

namespace t2i {

struct RunConfig {
    int n_candidates = 20;
    int k_clusters = 5;
    int max_iterations = 10;
    int m_samples = 3;
    double score_target = 5.0;
    int patience = 3;
    long seed = 0;
    bool fail_soft = true;

    void validate() const;
};

struct CandidatePrompt {
    int id = 0;
    std::string full_text;
    std::string modified_sentence;
    int source_mapping = 0;  // index into RunMetadata::mappings
    int iteration = 0;
    std::optional<int> parent;
    bool flagged_duplicate = false;  // proposal equal to the original after re-ask
};

struct ScoreItem {
    int question_id = 0;
    int rating = 0;  // 1..5
    std::string note;
};

struct ScoreReport {
    int candidate = 0;
    std::vector<ScoreItem> per_item;
    double average = 0.0;
    ImageRef image;
};

struct MemoryEntry {
    int iteration = 0;
    std::vector<int> sampled_prompts;
    std::vector<ImageRef> images;
    std::vector<double> scores;
    std::string feedback_summary;
    int best_candidate = -1;
    double best_score = 0.0;

    std::string content_hash() const;
};

struct IterationRecord {
    int iteration = 0;
    int mapping_index = 0;
    std::vector<CandidatePrompt> candidates;
    std::vector<ScoreReport> reports;
    ClusterAssignment assignment;
    ClusterPosterior posterior;
    std::vector<int> sampled;
    std::string embeddings_hash;
    std::vector<std::vector<double>> embeddings_2d_source;  // raw embeddings, for export
    std::string working_prompt_after;
    double working_score_after = 0.0;
    bool error_resolved = false;
};

// Mutable loop state; serializable so an interrupted run resumes exactly.
struct OptimizeState {
    std::string working_prompt;
    double working_score = 0.0;
    RunMetadata metadata;
    std::vector<std::string> piece_texts;  // current text of each piece as edits land
    std::vector<MemoryEntry> memory;
    std::vector<int> mapping_order;   // severity-desc order of mapping indices
    std::vector<bool> resolved;       // per mapping
    std::optional<ClusterPosterior> last_posterior;
    std::vector<std::vector<double>> last_centroids;
    int iteration = 0;
    int best_candidate_id = -1;
    std::string best_prompt;
    double best_score = 0.0;
    int stall_count = 0;
    int next_candidate_id = 0;

    std::optional<int> next_unresolved() const;

    nlohmann::json to_json() const;
    static OptimizeState from_json(const nlohmann::json& j);
};

struct OptimizeResult {
    std::string final_prompt;
    double final_score = 0.0;
    int iterations = 0;
    bool converged = false;  // every mapped error resolved
    OptimizeState state;
};

nlohmann::json metadata_to_json(const RunMetadata& meta);
RunMetadata metadata_from_json(const nlohmann::json& j);
nlohmann::json iteration_to_json(const IterationRecord& rec);

class Optimizer {
public:
    Optimizer(ChatBackend& chat, ImageBackend& t2i, EmbedBackend& embed,
              const TemplateSet& templates, const PatternCatalog* catalog, RunConfig config);

    // Pipeline events (stage1_done, iteration, memory_append, final) for the
    // run log; fired in order, each before the next pipeline step begins.
    std::function<void(const std::string& kind, const nlohmann::json&)> on_event;

    std::vector<std::string> propose_candidates(const ErrorRecord& error, const std::string& sentence,
                                                const std::vector<MemoryEntry>& memory, int n) const;
    CandidatePrompt merge_candidate(const std::string& prompt, const std::string& original_sentence,
                                    const std::string& modified_sentence,
                                    const std::vector<std::string>& untouched_pieces) const;
    ScoreReport score_prompt(const CandidatePrompt& candidate, const std::string& original_prompt,
                             const std::vector<QuestionItem>& questions, long seed) const;
    static std::vector<int> sample_cluster(const ClusterAssignment& assignment,
                                           const ClusterPosterior& posterior,
                                           const std::vector<ScoreReport>& reports, int m);
    void update_memory(std::vector<MemoryEntry>& memory, MemoryEntry entry) const;

    IterationRecord run_iteration(OptimizeState& state) const;
    OptimizeResult optimize(const std::string& prompt, const ErrorAnalyzer& analyzer) const;
    // Continues a reconstructed state (resume path).
    OptimizeResult optimize_from_state(OptimizeState state, const ErrorAnalyzer& analyzer) const;

    const RunConfig& config() const { return config_; }
    long chat_calls_upper_bound(int stage1_calls, int iterations, int questions) const;

private:
    std::string summarize_memory(const std::vector<CandidatePrompt>& sampled,
                                 const std::vector<ScoreReport>& reports,
                                 const std::vector<QuestionItem>& questions) const;
    bool recheck_resolved(const OptimizeState& state, int mapping_index, const ImageRef& image,
                          const ErrorAnalyzer& analyzer) const;

    ChatBackend& chat_;
    ImageBackend& t2i_;
    EmbedBackend& embed_;
    const TemplateSet& templates_;
    const PatternCatalog* catalog_;
    RunConfig config_;
    // the analyzer used for resolution rechecks is passed into optimize()
    mutable const ErrorAnalyzer* analyzer_ = nullptr;
};

}  // namespace t2i
