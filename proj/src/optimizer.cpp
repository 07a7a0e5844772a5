#include "t2iopt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace t2i {

using nlohmann::json;

namespace {

ChatRequest agent_request(std::string system_text, json payload,
                          const std::optional<ImageRef>& image = std::nullopt) {
    ChatRequest req;
    req.system_text = std::move(system_text);
    if (image) req.user_parts.push_back(ChatPart::image_part(*image));
    req.user_parts.push_back(ChatPart::text_part(payload.dump()));
    req.response_hint = ResponseHint::StrictJson;
    return req;
}

json image_to_json(const ImageRef& r) {
    return {{"content_hash", r.content_hash},
            {"media_type", r.media_type},
            {"byte_length", r.byte_length},
            {"provenance", r.provenance == Provenance::Synthetic ? "synthetic" : "http"},
            {"prompt_id", r.prompt_id},
            {"scene_id", r.scene_id}};
}

ImageRef image_from_json(const json& j) {
    ImageRef r;
    r.content_hash = j.value("content_hash", "");
    r.media_type = j.value("media_type", "image/png");
    r.byte_length = j.value("byte_length", std::size_t{0});
    r.provenance =
        j.value("provenance", "http") == "synthetic" ? Provenance::Synthetic : Provenance::Http;
    r.prompt_id = j.value("prompt_id", "");
    r.scene_id = j.value("scene_id", "");
    return r;
}

json error_to_json(const ErrorRecord& e) {
    json j = {{"category", aspect_name(e.category)},
              {"explanation", e.explanation},
              {"branch", branch_name(e.branch)},
              {"severity", e.severity}};
    if (e.mapped_sentence) j["mapped_sentence"] = *e.mapped_sentence;
    return j;
}

ErrorRecord error_from_json(const json& j) {
    ErrorRecord e;
    e.category = aspect_from_name(j.value("category", "Existence")).value_or(Aspect::Existence);
    e.explanation = j.value("explanation", "");
    std::string br = j.value("branch", "integrated");
    e.branch = br == "vqa"       ? ErrorBranch::Vqa
               : br == "caption" ? ErrorBranch::Caption
                                 : ErrorBranch::Integrated;
    e.severity = j.value("severity", 2);
    if (j.contains("mapped_sentence")) e.mapped_sentence = j["mapped_sentence"].get<int>();
    return e;
}

json candidate_to_json(const CandidatePrompt& c) {
    json j = {{"id", c.id},
              {"full_text", c.full_text},
              {"modified_sentence", c.modified_sentence},
              {"source_mapping", c.source_mapping},
              {"iteration", c.iteration},
              {"flagged_duplicate", c.flagged_duplicate}};
    if (c.parent) j["parent"] = *c.parent;
    return j;
}

json report_to_json(const ScoreReport& r) {
    json items = json::array();
    for (const auto& it : r.per_item)
        items.push_back({{"question_id", it.question_id}, {"rating", it.rating}, {"note", it.note}});
    return {{"candidate", r.candidate},
            {"per_item", items},
            {"average", r.average},
            {"image", image_to_json(r.image)}};
}

json memory_to_json(const MemoryEntry& m) {
    json images = json::array();
    for (const auto& i : m.images) images.push_back(image_to_json(i));
    return {{"iteration", m.iteration},
            {"sampled_prompts", m.sampled_prompts},
            {"images", images},
            {"scores", m.scores},
            {"feedback_summary", m.feedback_summary},
            {"best_candidate", m.best_candidate},
            {"best_score", m.best_score}};
}

MemoryEntry memory_from_json(const json& j) {
    MemoryEntry m;
    m.iteration = j.value("iteration", 0);
    m.sampled_prompts = j.value("sampled_prompts", std::vector<int>{});
    for (const auto& i : j.value("images", json::array())) m.images.push_back(image_from_json(i));
    m.scores = j.value("scores", std::vector<double>{});
    m.feedback_summary = j.value("feedback_summary", "");
    m.best_candidate = j.value("best_candidate", -1);
    m.best_score = j.value("best_score", 0.0);
    return m;
}

// Recent feedback window carried into proposal prompts.
constexpr std::size_t kHistoryWindow = 5;

}  // namespace

void RunConfig::validate() const {
    if (n_candidates < 1) throw PreconditionError("n_candidates must be >= 1");
    if (k_clusters < 1) throw PreconditionError("k_clusters must be >= 1");
    if (max_iterations < 1) throw PreconditionError("max_iterations must be >= 1");
    if (m_samples < 1) throw PreconditionError("m_samples must be >= 1");
    if (patience < 1) throw PreconditionError("patience must be >= 1");
    if (!(score_target > 0.0) || score_target > 5.0)
        throw PreconditionError("score_target must lie in (0, 5]");
}

std::string MemoryEntry::content_hash() const {
    return sha256_hex(memory_to_json(*this).dump());
}

std::optional<int> OptimizeState::next_unresolved() const {
    for (int m : mapping_order)
        if (!resolved[static_cast<std::size_t>(m)]) return m;
    return std::nullopt;
}

json metadata_to_json(const RunMetadata& meta) {
    json pieces = json::array();
    for (const auto& p : meta.pieces)
        pieces.push_back({{"index", p.index}, {"text", p.text}, {"kind", piece_kind_name(p.kind)}});
    json questions = json::array();
    for (const auto& q : meta.questions)
        questions.push_back({{"id", q.id},
                             {"target", q.target},
                             {"aspect", aspect_name(q.aspect)},
                             {"text", q.question_text}});
    json errors = json::array();
    for (const auto& e : meta.error_set.records) errors.push_back(error_to_json(e));
    json mappings = json::array();
    for (const auto& m : meta.mappings)
        mappings.push_back({{"error_index", m.error_index},
                            {"sentence_index", m.sentence_index},
                            {"rationale", m.rationale}});
    json history = json::array();
    for (const auto& h : meta.history)
        history.push_back({{"iteration", h.iteration}, {"note", h.note}});
    return {{"original_prompt", meta.original_prompt},
            {"original_image", image_to_json(meta.original_image)},
            {"errors", errors},
            {"mappings", mappings},
            {"pieces", pieces},
            {"questions", questions},
            {"history", history}};
}

RunMetadata metadata_from_json(const json& j) {
    RunMetadata meta;
    meta.original_prompt = j.value("original_prompt", "");
    meta.original_image = image_from_json(j.value("original_image", json::object()));
    for (const auto& e : j.value("errors", json::array()))
        meta.error_set.records.push_back(error_from_json(e));
    meta.error_set.branch = ErrorBranch::Integrated;
    for (const auto& m : j.value("mappings", json::array()))
        meta.mappings.push_back({m.value("error_index", 0), m.value("sentence_index", 0),
                                 m.value("rationale", std::string{})});
    for (const auto& p : j.value("pieces", json::array())) {
        MetaSentence ms;
        ms.index = p.value("index", 0);
        ms.text = p.value("text", "");
        ms.kind = piece_kind_from_name(p.value("kind", "Object")).value_or(PieceKind::Object);
        meta.pieces.push_back(ms);
    }
    for (const auto& q : j.value("questions", json::array())) {
        QuestionItem item;
        item.id = q.value("id", 0);
        item.target = q.value("target", 0);
        item.aspect = aspect_from_name(q.value("aspect", "Existence")).value_or(Aspect::Existence);
        item.question_text = q.value("text", "");
        meta.questions.push_back(item);
    }
    for (const auto& h : j.value("history", json::array()))
        meta.history.push_back({h.value("iteration", 0), h.value("note", std::string{})});
    return meta;
}

json iteration_to_json(const IterationRecord& rec) {
    json candidates = json::array();
    for (const auto& c : rec.candidates) candidates.push_back(candidate_to_json(c));
    json reports = json::array();
    for (const auto& r : rec.reports) reports.push_back(report_to_json(r));
    return {{"iteration", rec.iteration},
            {"mapping_index", rec.mapping_index},
            {"candidates", candidates},
            {"reports", reports},
            {"labels", rec.assignment.labels},
            {"centroids", rec.assignment.centroids},
            {"inertia", rec.assignment.inertia},
            {"k_effective", rec.assignment.k_effective},
            {"priors", rec.posterior.priors},
            {"likelihoods", rec.posterior.likelihoods},
            {"posteriors", rec.posterior.posteriors},
            {"best_cluster", rec.posterior.best},
            {"sampled", rec.sampled},
            {"embeddings_hash", rec.embeddings_hash},
            {"embeddings", rec.embeddings_2d_source},
            {"working_prompt_after", rec.working_prompt_after},
            {"working_score_after", rec.working_score_after},
            {"error_resolved", rec.error_resolved}};
}

json OptimizeState::to_json() const {
    json memory_json = json::array();
    for (const auto& m : memory) memory_json.push_back(memory_to_json(m));
    return {{"working_prompt", working_prompt},
            {"working_score", working_score},
            {"metadata", metadata_to_json(metadata)},
            {"piece_texts", piece_texts},
            {"memory", memory_json},
            {"mapping_order", mapping_order},
            {"resolved", resolved},
            {"has_posterior", last_posterior.has_value()},
            {"last_priors", last_posterior ? last_posterior->priors : std::vector<double>{}},
            {"last_likelihoods", last_posterior ? last_posterior->likelihoods : std::vector<double>{}},
            {"last_posteriors", last_posterior ? last_posterior->posteriors : std::vector<double>{}},
            {"last_best", last_posterior ? last_posterior->best : 0},
            {"last_centroids", last_centroids},
            {"iteration", iteration},
            {"best_candidate_id", best_candidate_id},
            {"best_prompt", best_prompt},
            {"best_score", best_score},
            {"stall_count", stall_count},
            {"next_candidate_id", next_candidate_id}};
}

OptimizeState OptimizeState::from_json(const json& j) {
    OptimizeState s;
    s.working_prompt = j.value("working_prompt", "");
    s.working_score = j.value("working_score", 0.0);
    s.metadata = metadata_from_json(j.value("metadata", json::object()));
    s.piece_texts = j.value("piece_texts", std::vector<std::string>{});
    for (const auto& m : j.value("memory", json::array())) s.memory.push_back(memory_from_json(m));
    s.mapping_order = j.value("mapping_order", std::vector<int>{});
    s.resolved = j.value("resolved", std::vector<bool>{});
    if (j.value("has_posterior", false)) {
        ClusterPosterior p;
        p.priors = j.value("last_priors", std::vector<double>{});
        p.likelihoods = j.value("last_likelihoods", std::vector<double>{});
        p.posteriors = j.value("last_posteriors", std::vector<double>{});
        p.best = j.value("last_best", 0);
        s.last_posterior = std::move(p);
    }
    s.last_centroids = j.value("last_centroids", std::vector<std::vector<double>>{});
    s.iteration = j.value("iteration", 0);
    s.best_candidate_id = j.value("best_candidate_id", -1);
    s.best_prompt = j.value("best_prompt", "");
    s.best_score = j.value("best_score", 0.0);
    s.stall_count = j.value("stall_count", 0);
    s.next_candidate_id = j.value("next_candidate_id", 0);
    return s;
}

Optimizer::Optimizer(ChatBackend& chat, ImageBackend& t2i, EmbedBackend& embed,
                     const TemplateSet& templates, const PatternCatalog* catalog, RunConfig config)
    : chat_(chat), t2i_(t2i), embed_(embed), templates_(templates), catalog_(catalog),
      config_(std::move(config)) {
    config_.validate();
}

std::vector<std::string> Optimizer::propose_candidates(const ErrorRecord& error,
                                                       const std::string& sentence,
                                                       const std::vector<MemoryEntry>& memory,
                                                       int n) const {
    if (n < 1) throw PreconditionError("propose_candidates: n must be >= 1");
    if (sentence.empty()) throw PreconditionError("propose_candidates: empty sentence");

    std::string strategies = "(none)";
    json strategies_json = json::array();
    if (catalog_) {
        std::ostringstream out;
        int shown = 0;
        for (const PatternEntry* entry : catalog_->match(error)) {
            if (shown++ >= 3) break;
            out << "- " << entry->name << ": " << entry->strategy_text << "\n";
            strategies_json.push_back(entry->strategy_text);
        }
        if (shown > 0) strategies = out.str();
    }
    std::string history = "(none)";
    json history_json = json::array();
    if (!memory.empty()) {
        std::ostringstream out;
        std::size_t start = memory.size() > kHistoryWindow ? memory.size() - kHistoryWindow : 0;
        for (std::size_t i = start; i < memory.size(); ++i) {
            out << "- " << memory[i].feedback_summary << "\n";
            history_json.push_back(memory[i].feedback_summary);
        }
        history = out.str();
    }
    std::string error_text = aspect_name(error.category) + ": " + error.explanation;
    std::string system = templates_.expand("refine", {{"n", std::to_string(n)},
                                                      {"sentence", sentence},
                                                      {"errors", error_text},
                                                      {"strategies", strategies},
                                                      {"history", history}});
    json payload = {{"task", "propose"},
                    {"sentence", sentence},
                    {"n", n},
                    {"error", {{"category", aspect_name(error.category)},
                               {"explanation", error.explanation}}},
                    {"strategies", strategies_json},
                    {"history", history_json}};

    auto ask = [&](const std::string& sys) {
        json reply = parse_strict_json(chat_.chat(agent_request(sys, payload)).text);
        if (!reply.contains("candidates") || !reply["candidates"].is_array())
            throw MalformedReply("propose: missing candidates array");
        std::vector<std::string> out;
        for (const auto& c : reply["candidates"]) {
            if (!c.is_string()) throw MalformedReply("propose: non-string candidate");
            out.push_back(normalize_ws(c.get<std::string>()));
        }
        return out;
    };

    std::vector<std::string> candidates = ask(system);
    auto needs_repair = [&](const std::vector<std::string>& cs) {
        std::set<std::string> seen;
        for (const auto& c : cs)
            if (c == normalize_ws(sentence) || !seen.insert(c).second) return true;
        return cs.empty();
    };
    if (needs_repair(candidates)) {
        candidates = ask(system +
                         "\nEvery rewrite must differ from the original sentence and from the "
                         "other rewrites.");
    }
    if (candidates.empty()) throw MalformedReply("propose: no candidates returned");
    if (static_cast<int>(candidates.size()) > n) candidates.resize(static_cast<std::size_t>(n));
    return candidates;
}

CandidatePrompt Optimizer::merge_candidate(const std::string& prompt,
                                           const std::string& original_sentence,
                                           const std::string& modified_sentence,
                                           const std::vector<std::string>& untouched_pieces) const {
    if (prompt.empty() || modified_sentence.empty())
        throw PreconditionError("merge_candidate: empty input");

    std::string system = templates_.expand("merge", {{"prompt", prompt},
                                                     {"sentence", original_sentence},
                                                     {"modified", modified_sentence}});
    json payload = {{"task", "merge"},
                    {"prompt", prompt},
                    {"sentence", original_sentence},
                    {"modified", modified_sentence}};

    auto check = [&](const std::string& merged) -> std::optional<std::string> {
        std::string norm = to_lower(normalize_ws(merged));
        if (norm.find(to_lower(normalize_ws(modified_sentence))) == std::string::npos)
            return "the modified sentence is missing from the merged prompt";
        for (const auto& piece : untouched_pieces)
            for (const auto& w : content_words(piece))
                if (!contains_word(norm, w))
                    return "the merged prompt dropped \"" + w + "\" from an untouched part";
        return std::nullopt;
    };

    std::string merged =
        parse_strict_json(chat_.chat(agent_request(system, payload)).text).value("merged", "");
    auto problem = check(merged);
    if (problem) {
        merged = parse_strict_json(
                     chat_.chat(agent_request(system + "\nYour previous merge was wrong: " +
                                                  *problem + ". Merge again, changing nothing else.",
                                              payload))
                         .text)
                     .value("merged", "");
        problem = check(merged);
        if (problem) throw MergeLoss("merge_candidate: " + *problem);
    }

    CandidatePrompt out;
    out.full_text = normalize_ws(merged);
    out.modified_sentence = normalize_ws(modified_sentence);
    return out;
}

ScoreReport Optimizer::score_prompt(const CandidatePrompt& candidate,
                                    const std::string& original_prompt,
                                    const std::vector<QuestionItem>& questions, long seed) const {
    if (questions.empty()) throw PreconditionError("score_prompt: no rubric questions");

    ScoreReport report;
    report.candidate = candidate.id;
    report.image = t2i_.generate_image(candidate.full_text, seed);

    std::vector<QuestionItem> ordered = questions;
    std::sort(ordered.begin(), ordered.end(),
              [](const QuestionItem& a, const QuestionItem& b) { return a.id < b.id; });

    long total = 0;
    for (const auto& q : ordered) {
        json qjson = {{"id", q.id},
                      {"target", q.target},
                      {"aspect", aspect_name(q.aspect)},
                      {"text", q.question_text}};
        std::string vqa_system = templates_.expand("scorer_vqa", {{"question", q.question_text}});
        json vqa_reply = parse_strict_json(
            chat_.chat(agent_request(vqa_system, {{"task", "vqa_answer"}, {"question", qjson}},
                                     report.image))
                .text);
        std::string label = to_upper(vqa_reply.value("label", ""));
        std::string explanation = vqa_reply.value("explanation", "");

        std::string rate_system =
            templates_.expand("rate", {{"prompt", original_prompt},
                                       {"question", q.question_text},
                                       {"finding", label + ": " + explanation}});
        json finding = {{"label", label}, {"explanation", explanation}};
        json rate_payload = {{"task", "rate"}, {"question", qjson}, {"finding", finding}};

        auto parse_rating = [&](const json& reply) -> std::optional<int> {
            if (!reply.contains("rating") || !reply["rating"].is_number_integer())
                return std::nullopt;
            int r = reply["rating"].get<int>();
            if (r < 1 || r > 5) return std::nullopt;
            return r;
        };

        json rate_reply =
            parse_strict_json(chat_.chat(agent_request(rate_system, rate_payload, report.image)).text);
        std::optional<int> rating = parse_rating(rate_reply);
        if (!rating) {
            rate_reply = parse_strict_json(
                chat_.chat(agent_request(rate_system + "\nThe rating must be an integer from 1 to 5.",
                                         rate_payload, report.image))
                    .text);
            rating = parse_rating(rate_reply);
            if (!rating)
                throw UnparseableRating("score_prompt: no integer rating in [1,5] for question " +
                                        std::to_string(q.id));
        }
        report.per_item.push_back({q.id, *rating, rate_reply.value("note", explanation)});
        total += *rating;
    }
    report.average = static_cast<double>(total) / static_cast<double>(report.per_item.size());
    return report;
}

std::vector<int> Optimizer::sample_cluster(const ClusterAssignment& assignment,
                                           const ClusterPosterior& posterior,
                                           const std::vector<ScoreReport>& reports, int m) {
    if (m < 1) throw PreconditionError("sample_cluster: m must be >= 1");
    if (assignment.labels.size() != reports.size())
        throw PreconditionError("sample_cluster: labels/reports size mismatch");

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < assignment.labels.size(); ++i)
        if (assignment.labels[i] == posterior.best) members.push_back(i);
    if (members.empty()) throw EmptyCluster("sample_cluster: selected cluster has no members");

    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
        if (reports[a].average != reports[b].average) return reports[a].average > reports[b].average;
        return reports[a].candidate < reports[b].candidate;
    });
    if (members.size() > static_cast<std::size_t>(m)) members.resize(static_cast<std::size_t>(m));

    std::vector<int> sampled;
    for (std::size_t i : members) sampled.push_back(reports[i].candidate);
    return sampled;
}

void Optimizer::update_memory(std::vector<MemoryEntry>& memory, MemoryEntry entry) const {
    if (entry.sampled_prompts.empty()) throw PreconditionError("update_memory: empty sampled set");
    // Elitism: best_so_far never decreases across entries.
    if (!memory.empty() && memory.back().best_score > entry.best_score) {
        entry.best_score = memory.back().best_score;
        entry.best_candidate = memory.back().best_candidate;
    }
    std::string hash = entry.content_hash();
    for (const auto& m : memory)
        if (m.content_hash() == hash) return;  // idempotent duplicate append
    memory.push_back(std::move(entry));
}

std::string Optimizer::summarize_memory(const std::vector<CandidatePrompt>& sampled,
                                        const std::vector<ScoreReport>& reports,
                                        const std::vector<QuestionItem>& questions) const {
    json candidates = json::array();
    json errors = json::array();
    json scores = json::array();
    std::ostringstream cand_text, err_text, score_text;
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        candidates.push_back(sampled[i].full_text);
        cand_text << "- " << sampled[i].full_text << "\n";
        scores.push_back(reports[i].average);
        score_text << reports[i].average << " ";
        for (const auto& item : reports[i].per_item)
            if (item.rating < 5) {
                // Aspect comes from the question the item graded.
                Aspect a = Aspect::Existence;
                for (const auto& q : questions)
                    if (q.id == item.question_id) a = q.aspect;
                errors.push_back({{"category", aspect_name(a)}, {"explanation", item.note}});
                err_text << "- " << aspect_name(a) << ": " << item.note << "\n";
            }
    }
    std::string system = templates_.expand(
        "summarize", {{"candidates", cand_text.str().empty() ? "(none)" : cand_text.str()},
                      {"errors", err_text.str().empty() ? "(none)" : err_text.str()},
                      {"scores", score_text.str()}});
    json payload = {{"task", "summarize"},
                    {"candidates", candidates},
                    {"errors", errors},
                    {"scores", scores}};
    return parse_strict_json(chat_.chat(agent_request(system, payload)).text)
        .value("summary", "");
}

bool Optimizer::recheck_resolved(const OptimizeState& state, int mapping_index,
                                 const ImageRef& image, const ErrorAnalyzer& analyzer) const {
    // Re-answers just the rubric questions covering the mapped piece; the
    // error is resolved only when all of them come back clean.
    const ErrorMapping& mapping = state.metadata.mappings[static_cast<std::size_t>(mapping_index)];
    const ErrorRecord& error =
        state.metadata.error_set.records[static_cast<std::size_t>(mapping.error_index)];
    std::vector<QuestionItem> same_aspect;
    for (const auto& q : state.metadata.questions)
        if (q.target == mapping.sentence_index && q.aspect == error.category)
            same_aspect.push_back(q);
    // Prefer the question(s) naming the same entity as the error explanation.
    std::vector<QuestionItem> covering;
    auto etoks = tokenize(error.explanation);
    std::set<std::string> eset(etoks.begin(), etoks.end());
    for (const auto& q : same_aspect)
        for (const auto& t : content_words(q.question_text))
            if (eset.count(t)) {
                covering.push_back(q);
                break;
            }
    if (covering.empty()) covering = same_aspect;
    if (covering.empty()) return true;
    ErrorSet remaining = analyzer.answer_questions(image, covering);
    return remaining.empty();
}

IterationRecord Optimizer::run_iteration(OptimizeState& state) const {
    auto next = state.next_unresolved();
    if (!next) throw PreconditionError("run_iteration: nothing left to optimize");
    int mapping_index = *next;
    const ErrorMapping& mapping = state.metadata.mappings[static_cast<std::size_t>(mapping_index)];
    const ErrorRecord& error =
        state.metadata.error_set.records[static_cast<std::size_t>(mapping.error_index)];
    const std::string sentence = state.piece_texts[static_cast<std::size_t>(mapping.sentence_index)];

    IterationRecord rec;
    rec.iteration = state.iteration;
    rec.mapping_index = mapping_index;

    std::vector<std::string> proposals =
        propose_candidates(error, sentence, state.memory, config_.n_candidates);

    std::vector<std::string> untouched;
    for (std::size_t i = 0; i < state.piece_texts.size(); ++i)
        if (static_cast<int>(i) != mapping.sentence_index) untouched.push_back(state.piece_texts[i]);

    std::set<std::string> seen;
    for (const auto& proposal : proposals) {
        if (!seen.insert(proposal).second) continue;
        try {
            CandidatePrompt cand =
                merge_candidate(state.working_prompt, sentence, proposal, untouched);
            cand.flagged_duplicate = proposal == normalize_ws(sentence);
            cand.id = state.next_candidate_id++;
            cand.source_mapping = mapping_index;
            cand.iteration = state.iteration;
            rec.candidates.push_back(std::move(cand));
        } catch (const std::exception& e) {
            if (!config_.fail_soft) throw;
            if (on_event) on_event("candidate_dropped", {{"stage", "merge"}, {"reason", e.what()}});
        }
    }
    if (rec.candidates.empty()) throw MergeLoss("run_iteration: every candidate failed to merge");

    std::vector<CandidatePrompt> scored;
    std::vector<double> scores;
    for (const auto& cand : rec.candidates) {
        try {
            ScoreReport report =
                score_prompt(cand, state.working_prompt, state.metadata.questions, config_.seed);
            scores.push_back(report.average);
            rec.reports.push_back(std::move(report));
            scored.push_back(cand);
        } catch (const std::exception& e) {
            if (!config_.fail_soft) throw;
            if (on_event)
                on_event("candidate_dropped",
                         {{"stage", "score"}, {"candidate", cand.id}, {"reason", e.what()}});
        }
    }
    if (rec.reports.empty()) throw EmptyRun("run_iteration: every candidate failed to score");
    rec.candidates = scored;

    std::vector<std::string> texts;
    for (const auto& c : rec.candidates) texts.push_back(c.full_text);
    std::vector<EmbeddingVector> embeddings = embed_texts(embed_, texts);
    std::string hash_input;
    for (const auto& e : embeddings) hash_input += e.source_text_hash;
    rec.embeddings_hash = sha256_hex(hash_input);
    for (const auto& e : embeddings) rec.embeddings_2d_source.push_back(e.values);

    rec.assignment = kmeans_fit(embeddings, config_.k_clusters,
                                config_.seed + static_cast<long>(state.iteration));
    std::vector<double> likelihoods = compute_likelihoods(rec.assignment, scores);
    std::vector<double> priors;
    if (state.last_posterior && !state.last_centroids.empty())
        priors = carry_prior_forward(*state.last_posterior, state.last_centroids,
                                     rec.assignment.centroids);
    else
        priors = uniform_prior(rec.assignment.k_effective);
    rec.posterior = bayesian_update(priors, likelihoods);

    rec.sampled = sample_cluster(rec.assignment, rec.posterior, rec.reports, config_.m_samples);

    std::vector<CandidatePrompt> sampled_prompts;
    std::vector<ScoreReport> sampled_reports;
    for (int id : rec.sampled)
        for (std::size_t i = 0; i < rec.candidates.size(); ++i)
            if (rec.candidates[i].id == id) {
                sampled_prompts.push_back(rec.candidates[i]);
                sampled_reports.push_back(rec.reports[i]);
            }

    MemoryEntry entry;
    entry.iteration = state.iteration;
    entry.sampled_prompts = rec.sampled;
    for (const auto& r : sampled_reports) {
        entry.images.push_back(r.image);
        entry.scores.push_back(r.average);
    }
    entry.feedback_summary =
        summarize_memory(sampled_prompts, sampled_reports, state.metadata.questions);
    entry.best_candidate = sampled_prompts.front().id;
    entry.best_score = sampled_reports.front().average;
    update_memory(state.memory, entry);
    state.metadata.history.push_back({state.iteration, entry.feedback_summary});
    if (on_event) on_event("memory_append", memory_to_json(entry));

    const CandidatePrompt& best_sampled = sampled_prompts.front();
    const ScoreReport& best_report = sampled_reports.front();
    if (best_report.average > state.working_score) {
        state.working_prompt = best_sampled.full_text;
        state.working_score = best_report.average;
        state.piece_texts[static_cast<std::size_t>(mapping.sentence_index)] =
            best_sampled.modified_sentence;
    }
    if (best_report.average > state.best_score) {
        state.best_score = best_report.average;
        state.best_prompt = best_sampled.full_text;
        state.best_candidate_id = best_sampled.id;
        state.stall_count = 0;
    } else {
        ++state.stall_count;
    }

    // Resolution: target score reached, or the error is gone from a fresh
    // analysis of the best sampled image.
    bool resolved = best_report.average >= config_.score_target;
    if (analyzer_)
        resolved = recheck_resolved(state, mapping_index, best_report.image, *analyzer_);
    if (resolved) {
        state.resolved[static_cast<std::size_t>(mapping_index)] = true;
        rec.error_resolved = true;
    }

    state.last_posterior = rec.posterior;
    state.last_centroids = rec.assignment.centroids;
    ++state.iteration;
    rec.working_prompt_after = state.working_prompt;
    rec.working_score_after = state.working_score;

    if (on_event) {
        json event = iteration_to_json(rec);
        event["state"] = state.to_json();
        on_event("iteration", event);
    }
    return rec;
}

OptimizeResult Optimizer::optimize(const std::string& prompt, const ErrorAnalyzer& analyzer) const {
    if (normalize_ws(prompt).empty()) throw PreconditionError("optimize: empty prompt");

    ImageRef image = t2i_.generate_image(prompt, config_.seed);
    RunMetadata metadata = analyzer.analyze(prompt, image);
    if (on_event) on_event("stage1_done", metadata_to_json(metadata));

    OptimizeState state;
    state.metadata = metadata;
    state.working_prompt = normalize_ws(prompt);
    for (const auto& p : metadata.pieces) state.piece_texts.push_back(p.text);
    state.resolved.assign(metadata.mappings.size(), false);

    // Severity-desc processing order, ties by mapping index.
    state.mapping_order.resize(metadata.mappings.size());
    std::iota(state.mapping_order.begin(), state.mapping_order.end(), 0);
    std::stable_sort(state.mapping_order.begin(), state.mapping_order.end(), [&](int a, int b) {
        int sa = metadata.error_set.records[metadata.mappings[a].error_index].severity;
        int sb = metadata.error_set.records[metadata.mappings[b].error_index].severity;
        return sa > sb;
    });

    // The original prompt seeds elitism unscored; any scored candidate beats it.
    state.working_score = 0.0;
    state.best_score = 0.0;
    state.best_prompt = state.working_prompt;
    state.best_candidate_id = -1;

    if (metadata.mappings.empty()) {
        // Error-free fixed point: report the original prompt's own score.
        CandidatePrompt original;
        original.id = state.next_candidate_id++;
        original.full_text = state.working_prompt;
        ScoreReport baseline =
            score_prompt(original, state.working_prompt, metadata.questions, config_.seed);
        state.working_score = baseline.average;
        state.best_score = baseline.average;
    }
    if (on_event) on_event("state_init", state.to_json());

    return optimize_from_state(std::move(state), analyzer);
}

OptimizeResult Optimizer::optimize_from_state(OptimizeState state,
                                              const ErrorAnalyzer& analyzer) const {
    analyzer_ = &analyzer;
    while (state.iteration < config_.max_iterations && state.next_unresolved() &&
           state.stall_count < config_.patience) {
        run_iteration(state);
    }
    analyzer_ = nullptr;

    OptimizeResult result;
    result.final_prompt = state.best_prompt;
    result.final_score = state.best_score;
    result.iterations = state.iteration;
    result.converged = !state.next_unresolved().has_value();
    result.state = std::move(state);
    if (on_event)
        on_event("final", {{"final_prompt", result.final_prompt},
                           {"final_score", result.final_score},
                           {"iterations", result.iterations},
                           {"converged", result.converged}});
    return result;
}

long Optimizer::chat_calls_upper_bound(int stage1_calls, int iterations, int questions) const {
    // Per iteration: 1 proposal (+1 repair), N merges (+1 repair each),
    // N * Q * 2 scoring calls (+1 repair each), 1 summary, and at most
    // Q recheck calls on resolution.
    long n = config_.n_candidates;
    long q = questions;
    long per_iter = 2 + n * 2 + n * q * 2 * 2 + 1 + q;
    // Baseline score of the unmodified prompt.
    return stage1_calls + q * 2 * 2 + static_cast<long>(iterations) * per_iter;
}

}  // namespace t2i
