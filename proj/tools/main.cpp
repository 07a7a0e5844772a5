#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "t2iopt/error_analysis.hpp"
#include "t2iopt/http_backend.hpp"
#include "t2iopt/optimizer.hpp"
#include "t2iopt/pattern_catalog.hpp"
#include "t2iopt/run_log.hpp"
#include "t2iopt/synthetic_agents.hpp"
#include "t2iopt/synthetic_env.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace t2i;

namespace {

struct CliOptions {
    std::string config_path;
    std::string backend = "mock";
    long seed = 0;
    std::string out = "run";
    bool resume = false;
    std::string prompt;
    std::string prompt_file;
    int tasks = 10;
    RunConfig run;
};

fs::path assets_dir() {
    if (const char* env = std::getenv("T2IOPT_ASSETS")) return env;
    return "assets";
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw PreconditionError("config: cannot open " + path);
    return json::parse(in);
}

std::string env_or(const std::string& name, const std::string& fallback) {
    const char* v = std::getenv(name.c_str());
    return v && *v ? v : fallback;
}

BackendConfig backend_config(const json& config, const std::string& section) {
    json sec = config.value(section, json::object());
    BackendConfig out;
    std::string upper = to_upper(section);
    out.base_url = env_or("T2IOPT_" + upper + "_BASE_URL", sec.value("base_url", ""));
    out.api_key_env = env_or("T2IOPT_" + upper + "_API_KEY_ENV", sec.value("api_key_env", ""));
    out.model_name = env_or("T2IOPT_" + upper + "_MODEL", sec.value("model_name", ""));
    out.max_concurrency = sec.value("max_concurrency", out.max_concurrency);
    out.timeout_ms = sec.value("timeout_ms", out.timeout_ms);
    out.retry.max_attempts = sec.value("max_attempts", out.retry.max_attempts);
    out.retry.initial_backoff_ms = sec.value("initial_backoff_ms", out.retry.initial_backoff_ms);
    out.retry.multiplier = sec.value("multiplier", out.retry.multiplier);
    out.t2i_path = sec.value("t2i_path", out.t2i_path);
    out.t2i_prompt_field = sec.value("t2i_prompt_field", out.t2i_prompt_field);
    out.t2i_b64_field = sec.value("t2i_b64_field", out.t2i_b64_field);
    return out;
}

void apply_pipeline_config(const json& config, RunConfig& run) {
    json sec = config.value("pipeline", json::object());
    run.n_candidates = sec.value("n_candidates", run.n_candidates);
    run.k_clusters = sec.value("k_clusters", run.k_clusters);
    run.max_iterations = sec.value("max_iterations", run.max_iterations);
    run.m_samples = sec.value("m_samples", run.m_samples);
    run.score_target = sec.value("score_target", run.score_target);
    run.patience = sec.value("patience", run.patience);
    run.seed = sec.value("seed", run.seed);
    run.fail_soft = sec.value("fail_soft", run.fail_soft);
}

// Backend bundle for one run. Mock mode wires the deterministic synthetic
// stack; http mode wires OpenAI-compatible endpoints from the config file.
struct Backends {
    std::unique_ptr<ArtifactStore> store;
    std::unique_ptr<ChatBackend> chat;
    std::unique_ptr<ImageBackend> t2i;
    std::unique_ptr<EmbedBackend> embed;
};

json task_to_json(const synth::SyntheticTask& task) {
    return {{"task_id", task.task_id},
            {"prompt", task.prompt},
            {"ground_truth", task.ground_truth.to_json_string()},
            {"corruption_profile", task.corruption_profile},
            {"seed", task.seed}};
}

synth::SyntheticTask task_from_json(const json& j) {
    synth::SyntheticTask task;
    task.task_id = j.value("task_id", "");
    task.prompt = j.value("prompt", "");
    task.ground_truth = synth::SceneSpec::from_json_string(j.value("ground_truth", "{}"));
    task.corruption_profile = j.value("corruption_profile", std::map<std::string, double>{});
    task.seed = j.value("seed", 0L);
    return task;
}

// A free-form mock prompt becomes its own task: the parsed facts are the
// ground truth and every expressed aspect is highly corruption-prone.
synth::SyntheticTask task_from_prompt(const std::string& prompt, long seed) {
    synth::PromptFacts facts = synth::parse_prompt(prompt);
    synth::SyntheticTask task;
    task.prompt = normalize_ws(prompt);
    task.seed = seed;
    for (const auto& o : facts.objects) {
        synth::SceneObject obj;
        obj.noun = o.noun;
        obj.count = o.count.value_or(1);
        obj.color = o.color.value_or("");
        obj.texture = o.texture.value_or("");
        obj.state = o.state.value_or("");
        task.ground_truth.objects.push_back(obj);
    }
    auto index_of = [&](const std::string& noun) {
        for (std::size_t i = 0; i < task.ground_truth.objects.size(); ++i)
            if (task.ground_truth.objects[i].noun == noun) return static_cast<int>(i);
        return 0;
    };
    for (const auto& r : facts.relations)
        task.ground_truth.relations.push_back(
            {index_of(r.subject_noun), r.predicate, index_of(r.object_noun)});
    task.ground_truth.background = facts.background.value_or("");
    task.ground_truth.style = facts.style.value_or("");
    task.corruption_profile = {{"Number", 0.9},    {"Color", 0.9},    {"Existence", 0.1},
                               {"Texture", 0.9},   {"State", 0.9},    {"Relation", 0.7},
                               {"Background", 0.7}, {"Style", 0.7}};
    task.task_id = task.ground_truth.id();
    return task;
}

Backends make_backends(const CliOptions& opts, const json& config, const fs::path& out_dir,
                       const synth::SyntheticTask& task, CallSink sink) {
    Backends b;
    b.store = std::make_unique<ArtifactStore>(out_dir);
    if (opts.backend == "mock") {
        b.chat = std::make_unique<synth::SyntheticAgentBackend>(*b.store);
        b.t2i = std::make_unique<synth::SyntheticImageBackend>(*b.store, task);
        b.embed = std::make_unique<MockEmbedBackend>();
    } else {
        b.chat = std::make_unique<HttpChatBackend>(backend_config(config, "chat"), *b.store, sink);
        b.t2i = std::make_unique<HttpImageBackend>(backend_config(config, "t2i"), *b.store, sink);
        b.embed = std::make_unique<HttpEmbedBackend>(backend_config(config, "embed"), sink);
    }
    return b;
}

std::vector<std::string> read_prompts(const CliOptions& opts) {
    std::vector<std::string> prompts;
    if (!opts.prompt.empty()) prompts.push_back(opts.prompt);
    if (!opts.prompt_file.empty()) {
        std::ifstream in(opts.prompt_file);
        if (!in) throw PreconditionError("cannot open prompt file " + opts.prompt_file);
        std::string line;
        while (std::getline(in, line)) {
            if (normalize_ws(line).empty()) continue;
            if (line.front() == '{')
                prompts.push_back(json::parse(line).value("prompt", ""));
            else
                prompts.push_back(line);
        }
    }
    if (prompts.empty()) throw PreconditionError("no prompt given (use --prompt or --prompt-file)");
    return prompts;
}

json config_snapshot(const CliOptions& opts, const json& config) {
    // Secrets never land in the log: backend sections carry env-var *names*.
    json snap = config;
    snap["pipeline"] = {{"n_candidates", opts.run.n_candidates},
                        {"k_clusters", opts.run.k_clusters},
                        {"max_iterations", opts.run.max_iterations},
                        {"m_samples", opts.run.m_samples},
                        {"score_target", opts.run.score_target},
                        {"patience", opts.run.patience},
                        {"seed", opts.run.seed},
                        {"fail_soft", opts.run.fail_soft}};
    snap["backend"] = opts.backend;
    return snap;
}

void write_json(const fs::path& path, const json& value) {
    std::ofstream out(path);
    out << value.dump(2) << "\n";
}

OptimizeResult run_optimize(const CliOptions& opts, const json& config, const fs::path& out_dir,
                            const std::string& prompt, const synth::SyntheticTask& task,
                            bool resume) {
    RunLog log(out_dir);
    CallSink sink = [&](const json& record) { log.append("http_call", record); };
    Backends b = make_backends(opts, config, out_dir, task, sink);

    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");
    PatternCatalog catalog = PatternCatalog::load(assets_dir() / "patterns.json");
    ErrorAnalyzer analyzer(*b.chat, templates);
    Optimizer optimizer(*b.chat, *b.t2i, *b.embed, templates, &catalog, opts.run);
    optimizer.on_event = [&](const std::string& kind, const json& payload) {
        log.append(kind, payload);
        if (kind == "stage1_done") write_json(out_dir / "metadata.json", payload);
    };

    OptimizeResult result;
    if (resume) {
        auto events = RunLog::read(out_dir,
                                   [](const std::string& w) { std::cerr << w << "\n"; });
        if (run_finalized(events)) {
            std::cout << "run already finalized; nothing to resume\n";
            std::ifstream in(out_dir / "final.json");
            json final_json = json::parse(in);
            result.final_prompt = final_json.value("final_prompt", "");
            result.final_score = final_json.value("final_score", 0.0);
            result.iterations = final_json.value("iterations", 0);
            result.converged = final_json.value("converged", false);
            return result;
        }
        result = optimizer.optimize_from_state(resume_state(events), analyzer);
    } else {
        log.append("run_start", {{"run_id", new_run_id(opts.run.seed)},
                                 {"prompt", prompt},
                                 {"task", task_to_json(task)},
                                 {"config", config_snapshot(opts, config)}});
        result = optimizer.optimize(prompt, analyzer);
    }
    write_json(out_dir / "final.json", {{"final_prompt", result.final_prompt},
                                        {"final_score", result.final_score},
                                        {"iterations", result.iterations},
                                        {"converged", result.converged}});
    return result;
}

// Baseline 1: blind random rewriting. Each round picks a random sentence and a
// random aspect to emphasize, adopts the rewrite unconditionally, and never
// consults the analyzed errors or the verifier. Only the final prompt is scored.
double random_rewrite_baseline(const CliOptions& opts, const json& config, const fs::path& out_dir,
                               const synth::SyntheticTask& task) {
    Backends b = make_backends(opts, config, out_dir, task, nullptr);
    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");
    PatternCatalog catalog = PatternCatalog::load(assets_dir() / "patterns.json");
    ErrorAnalyzer analyzer(*b.chat, templates);
    Optimizer optimizer(*b.chat, *b.t2i, *b.embed, templates, &catalog, opts.run);

    ImageRef image = b.t2i->generate_image(task.prompt, opts.run.seed);
    RunMetadata meta = analyzer.analyze(task.prompt, image);
    if (meta.mappings.empty()) return 5.0;

    static constexpr Aspect kAspects[] = {Aspect::Existence, Aspect::Number,   Aspect::Color,
                                          Aspect::Texture,   Aspect::State,    Aspect::Relation,
                                          Aspect::Background, Aspect::Style};
    std::mt19937_64 rng(static_cast<std::uint64_t>(opts.run.seed) * 1000003ull + 17);
    std::string working = normalize_ws(task.prompt);
    std::vector<std::string> piece_texts;
    for (const auto& p : meta.pieces) piece_texts.push_back(p.text);
    int id = 0;
    for (int iter = 0; iter < opts.run.max_iterations; ++iter) {
        int sentence_index = static_cast<int>(rng() % piece_texts.size());
        std::string sentence = piece_texts[sentence_index];
        ErrorRecord guess;
        guess.category = kAspects[rng() % std::size(kAspects)];
        guess.explanation = "emphasize this aspect of the scene";
        auto proposals = optimizer.propose_candidates(guess, sentence, {}, opts.run.n_candidates);
        std::string pick = proposals[rng() % proposals.size()];
        std::vector<std::string> untouched;
        for (std::size_t i = 0; i < piece_texts.size(); ++i)
            if (static_cast<int>(i) != sentence_index) untouched.push_back(piece_texts[i]);
        CandidatePrompt cand;
        try {
            cand = optimizer.merge_candidate(working, sentence, pick, untouched);
        } catch (const MergeLoss&) {
            continue;
        }
        cand.id = id++;
        working = cand.full_text;
        piece_texts[sentence_index] = cand.modified_sentence;
    }
    CandidatePrompt final_cand;
    final_cand.id = id;
    final_cand.full_text = working;
    final_cand.modified_sentence = working;
    ScoreReport report = optimizer.score_prompt(final_cand, working, meta.questions, opts.run.seed);
    return report.average;
}

// Baseline 2: best-of-N with elitism but neither clustering nor memory.
double best_of_n_baseline(const CliOptions& opts, const json& config, const fs::path& out_dir,
                          const synth::SyntheticTask& task) {
    Backends b = make_backends(opts, config, out_dir, task, nullptr);
    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");
    PatternCatalog catalog = PatternCatalog::load(assets_dir() / "patterns.json");
    ErrorAnalyzer analyzer(*b.chat, templates);
    Optimizer optimizer(*b.chat, *b.t2i, *b.embed, templates, &catalog, opts.run);

    ImageRef image = b.t2i->generate_image(task.prompt, opts.run.seed);
    RunMetadata meta = analyzer.analyze(task.prompt, image);
    if (meta.mappings.empty()) return 5.0;

    std::string working = normalize_ws(task.prompt);
    std::vector<std::string> piece_texts;
    for (const auto& p : meta.pieces) piece_texts.push_back(p.text);
    double best = 0.0;
    int id = 0;
    for (int iter = 0; iter < opts.run.max_iterations; ++iter) {
        const ErrorMapping& mapping = meta.mappings[iter % meta.mappings.size()];
        const ErrorRecord& error = meta.error_set.records[mapping.error_index];
        std::string sentence = piece_texts[mapping.sentence_index];
        auto proposals =
            optimizer.propose_candidates(error, sentence, {}, opts.run.n_candidates);
        std::vector<std::string> untouched;
        for (std::size_t i = 0; i < piece_texts.size(); ++i)
            if (static_cast<int>(i) != mapping.sentence_index) untouched.push_back(piece_texts[i]);
        double round_best = -1.0;
        CandidatePrompt round_cand;
        for (const auto& pick : proposals) {
            CandidatePrompt cand;
            try {
                cand = optimizer.merge_candidate(working, sentence, pick, untouched);
            } catch (const MergeLoss&) {
                continue;
            }
            cand.id = id++;
            ScoreReport report =
                optimizer.score_prompt(cand, working, meta.questions, opts.run.seed);
            if (report.average > round_best) {
                round_best = report.average;
                round_cand = cand;
            }
        }
        if (round_best > best) {
            best = round_best;
            working = round_cand.full_text;
            piece_texts[mapping.sentence_index] = round_cand.modified_sentence;
        }
        if (best >= opts.run.score_target) break;
    }
    return best;
}

int cmd_analyze(const CliOptions& opts, const json& config) {
    std::string prompt = read_prompts(opts).front();
    fs::path out_dir(opts.out);
    fs::create_directories(out_dir);
    synth::SyntheticTask task =
        opts.backend == "mock" ? task_from_prompt(prompt, opts.run.seed) : synth::SyntheticTask{};
    Backends b = make_backends(opts, config, out_dir, task, nullptr);
    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");
    ErrorAnalyzer analyzer(*b.chat, templates);
    ImageRef image = b.t2i->generate_image(prompt, opts.run.seed);
    RunMetadata meta = analyzer.analyze(prompt, image);
    write_json(out_dir / "metadata.json", metadata_to_json(meta));
    std::cout << "errors: " << meta.error_set.records.size() << ", pieces: " << meta.pieces.size()
              << ", questions: " << meta.questions.size() << "\n";
    return 0;
}

int cmd_optimize(const CliOptions& opts, const json& config) {
    fs::path out_dir(opts.out);
    fs::create_directories(out_dir);
    std::string prompt;
    synth::SyntheticTask task;
    if (opts.resume) {
        auto events = RunLog::read(out_dir, [](const std::string& w) { std::cerr << w << "\n"; });
        if (events.empty() || events.front().kind != "run_start")
            throw CorruptLog("resume: run_start event missing");
        prompt = events.front().payload.value("prompt", "");
        task = task_from_json(events.front().payload.value("task", json::object()));
    } else {
        prompt = read_prompts(opts).front();
        task = opts.backend == "mock" ? task_from_prompt(prompt, opts.run.seed)
                                      : synth::SyntheticTask{};
    }
    OptimizeResult result = run_optimize(opts, config, out_dir, prompt, task, opts.resume);
    std::cout << "final score " << result.final_score << " after " << result.iterations
              << " iterations\nfinal prompt: " << result.final_prompt << "\n";
    return 0;
}

json simulate_tasks(const CliOptions& opts, const json& config, const fs::path& out_dir) {
    auto tasks = synth::generate_tasks(opts.tasks, opts.run.seed);
    json table = json::array();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        CliOptions task_opts = opts;
        task_opts.run.seed = opts.run.seed;  // same pipeline seed for every task
        fs::path task_dir = out_dir / ("task_" + std::to_string(i));
        fs::create_directories(task_dir);
        OptimizeResult result =
            run_optimize(task_opts, config, task_dir, tasks[i].prompt, tasks[i], false);
        json best_so_far = json::array();
        for (const auto& entry : result.state.memory) best_so_far.push_back(entry.best_score);
        table.push_back({{"task_id", tasks[i].task_id},
                         {"prompt", tasks[i].prompt},
                         {"final_score", result.final_score},
                         {"iterations", result.iterations},
                         {"converged", result.converged},
                         {"best_so_far", best_so_far}});
    }
    return table;
}

int cmd_simulate(const CliOptions& opts, const json& config) {
    fs::path out_dir(opts.out);
    fs::create_directories(out_dir);
    json table = simulate_tasks(opts, config, out_dir);
    write_json(out_dir / "simulate.json", table);
    double reached = 0;
    for (const auto& row : table)
        if (row["final_score"].get<double>() >= opts.run.score_target) ++reached;
    std::cout << "tasks: " << table.size() << ", reached target: " << reached << "\n";
    for (const auto& row : table)
        std::cout << row["task_id"].get<std::string>() << "  " << row["final_score"].get<double>()
                  << "  iters=" << row["iterations"].get<int>() << "\n";
    return 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

int cmd_bench(const CliOptions& opts, const json& config) {
    fs::path out_dir(opts.out);
    fs::create_directories(out_dir);
    json table = simulate_tasks(opts, config, out_dir / "full");
    auto tasks = synth::generate_tasks(opts.tasks, opts.run.seed);
    std::vector<double> full, random_rw, best_of_n;
    for (const auto& row : table) full.push_back(row["final_score"].get<double>());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        fs::path base_dir = out_dir / "baseline" / std::to_string(i);
        fs::create_directories(base_dir);
        random_rw.push_back(random_rewrite_baseline(opts, config, base_dir, tasks[i]));
        best_of_n.push_back(best_of_n_baseline(opts, config, base_dir, tasks[i]));
    }
    json bench = {{"tasks", table},
                  {"median_full", median(full)},
                  {"median_random_rewrite", median(random_rw)},
                  {"median_best_of_n", median(best_of_n)},
                  {"random_rewrite", random_rw},
                  {"best_of_n", best_of_n}};
    write_json(out_dir / "bench.json", bench);
    std::cout << "method              median final score\n"
              << "full pipeline       " << bench["median_full"].get<double>() << "\n"
              << "best-of-N           " << bench["median_best_of_n"].get<double>() << "\n"
              << "random rewrite      " << bench["median_random_rewrite"].get<double>() << "\n";
    return 0;
}

int cmd_export(const CliOptions& opts) {
    fs::path out_dir(opts.out);
    auto events = RunLog::read(out_dir, [](const std::string& w) { std::cerr << w << "\n"; });
    export_clusters(events, out_dir / "clusters.csv", opts.run.seed);
    std::cout << "wrote " << (out_dir / "clusters.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"test-time text-to-image prompt optimization"};
    app.require_subcommand(1);
    app.fallthrough();

    CliOptions opts;
    app.add_option("--config", opts.config_path, "JSON config file");
    app.add_option("--backend", opts.backend, "mock | http")
        ->check(CLI::IsMember({"mock", "http"}));
    long flag_seed = 0;
    int flag_iters = 0, flag_candidates = 0, flag_clusters = 0, flag_samples = 0;
    app.add_option("--seed", flag_seed, "pipeline seed");
    app.add_option("--out", opts.out, "run directory");
    app.add_option("--max-iterations", flag_iters, "iteration cap");
    app.add_option("--candidates", flag_candidates, "candidates per round (N)");
    app.add_option("--clusters", flag_clusters, "cluster count (K)");
    app.add_option("--samples", flag_samples, "sampled prompts per round (m)");

    auto* analyze = app.add_subcommand("analyze", "Stage 1 error analysis only");
    auto* optimize = app.add_subcommand("optimize", "full optimization pipeline");
    auto* simulate = app.add_subcommand("simulate", "optimize generated synthetic tasks");
    auto* bench = app.add_subcommand("bench", "simulate plus baseline comparison");
    auto* exportc = app.add_subcommand("export", "export cluster trajectories to CSV");
    for (auto* sub : {analyze, optimize}) {
        sub->add_option("--prompt", opts.prompt, "prompt text");
        sub->add_option("--prompt-file", opts.prompt_file, "prompt file (text or JSONL)");
    }
    optimize->add_flag("--resume", opts.resume, "continue an interrupted run");
    for (auto* sub : {simulate, bench})
        sub->add_option("--tasks", opts.tasks, "number of synthetic tasks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        json config = load_config_file(opts.config_path);
        apply_pipeline_config(config, opts.run);
        // Precedence: CLI flags > environment > config file > defaults.
        if (app.count("--seed")) opts.run.seed = flag_seed;
        if (app.count("--max-iterations")) opts.run.max_iterations = flag_iters;
        if (app.count("--candidates")) opts.run.n_candidates = flag_candidates;
        if (app.count("--clusters")) opts.run.k_clusters = flag_clusters;
        if (app.count("--samples")) opts.run.m_samples = flag_samples;
        opts.run.validate();

        if (analyze->parsed()) return cmd_analyze(opts, config);
        if (optimize->parsed()) return cmd_optimize(opts, config);
        if (simulate->parsed()) return cmd_simulate(opts, config);
        if (bench->parsed()) return cmd_bench(opts, config);
        if (exportc->parsed()) return cmd_export(opts);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
