#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2iopt/artifact_store.hpp"
#include "t2iopt/backends.hpp"
#include "t2iopt/error_types.hpp"

namespace t2i::synth {

// ---- scenes ----------------------------------------------------------------

struct SceneObject {
    std::string noun;
    int count = 1;
    std::string color;    // empty = unspecified
    std::string texture;
    std::string state;
};

struct SceneRelation {
    int subject = 0;  // object index
    std::string predicate;
    int object = 0;
};

struct SceneSpec {
    std::vector<SceneObject> objects;
    std::vector<SceneRelation> relations;
    std::string background;
    std::string style;

    const SceneObject* find(const std::string& noun) const;
    std::string to_json_string() const;
    static SceneSpec from_json_string(const std::string& s);
    std::string id() const;  // content hash of the serialization
};

// ---- prompt grammar --------------------------------------------------------
//
// The closed-world grammar the mock stack understands. Clauses are separated
// by '.' or ';'. Within a clause:
//   [count|article] [color] [texture] [state] noun [predicate NP]
//   "without X" / "no X" declares an exclusion
//   "in Y style" declares a style
//   "against a Z background" declares the background
// Parsing is keyword-driven and lenient: unknown adjectives are ignored, so
// agent-inserted emphasis words never break the parse.

struct ObjectFact {
    std::string noun;
    std::optional<int> count;
    std::optional<std::string> color;
    std::optional<std::string> texture;
    std::optional<std::string> state;
};

struct RelationFact {
    std::string subject_noun;
    std::string predicate;
    std::string object_noun;
};

struct PromptFacts {
    std::vector<ObjectFact> objects;
    std::vector<RelationFact> relations;
    std::vector<std::string> exclusions;  // nouns that must be absent
    std::optional<std::string> background;
    std::optional<std::string> style;

    const ObjectFact* find(const std::string& noun) const;
};

// Throws GrammarError when no object can be extracted at all.
PromptFacts parse_prompt(const std::string& prompt);

std::optional<int> count_word_value(std::string_view word);
std::string count_word(int n);  // "one".."twelve", digits beyond

// ---- tasks -----------------------------------------------------------------

struct SyntheticTask {
    std::string task_id;
    std::string prompt;            // canonical prompt drawn from the grammar
    SceneSpec ground_truth;
    std::map<std::string, double> corruption_profile;  // aspect name -> susceptibility
    long seed = 0;
};

// Deterministic task list spanning count, color binding, spatial relation,
// exclusion, texture and state categories.
std::vector<SyntheticTask> generate_tasks(int count, long seed);

// The worked single-error example task: "six baozi in a bamboo steamer".
SyntheticTask baozi_task();

// ---- rendering -------------------------------------------------------------
//
// Corruption rule: a ground-truth constraint is corrupted iff
//   hash_fraction(mix_hash({normalize_ws(prompt), constraint_id}, seed))
//     < susceptibility(aspect) * mitigation_multiplier(prompt, constraint)
// Mitigation multipliers (per constraint, from the prompt text):
//   Number:    "exactly"/"precisely" -> 0.25; count word repeated -> 0.4
//   Color:     color word repeated -> 0.4; "vivid"/"distinctly" -> 0.3
//   Existence: noun repeated -> 0.4; "prominently" -> 0.3
//   Relation:  "directly"/"clearly" -> 0.3; predicate repeated -> 0.4
//   Exclusion: "at all"/"completely" -> 0.2; exclusion phrase repeated -> 0.4
//   Texture:   texture word repeated -> 0.4; "detailed" -> 0.3
//   State:     state word repeated -> 0.4; "clearly" -> 0.3
//   Background/Style: word repeated -> 0.4; "consistent" -> 0.3
// Two or more distinct mitigation features targeting the same constraint
// suppress its corruption entirely, which makes every task's search target
// reachable (ground truth + full mitigation always renders clean).
SceneSpec render_scene(const std::string& prompt, const SyntheticTask& task, long seed);

// Multiplier in [0,1]; 0 when >= 2 features present.
double mitigation_multiplier(const PromptFacts& facts, const std::string& prompt_text,
                             Aspect aspect, const std::string& constraint_noun,
                             const std::string& constraint_value);

// ---- exact VQA oracle ------------------------------------------------------

struct VqaVerdict {
    bool yes = false;
    std::string explanation;
};

// Evaluates one yes/no question (in the forms the mock question generator
// emits) exactly against a scene. Throws UnsupportedAspect when the scene has
// no attribute of the queried kind.
VqaVerdict mock_vqa_answer(const SceneSpec& scene, const QuestionItem& question);

// Deterministic grammar-conformant caption of a scene.
std::string describe_scene(const SceneSpec& scene);

// Questions covering every constraint expressible from a prompt, used both by
// the Stage-1 mock question agent and by the scorer rubric.
std::vector<QuestionItem> questions_for_facts(const PromptFacts& facts, int target_piece);

// ---- image encoding --------------------------------------------------------

// Placeholder PNG: a solid-color grid encoding object counts, with the scene
// JSON embedded in a tEXt chunk so agents can recover it from stored bytes.
std::string scene_to_png(const SceneSpec& scene);
SceneSpec scene_from_png(const std::string& png_bytes);

// ---- T2I backend -----------------------------------------------------------

class SyntheticImageBackend final : public ImageBackend {
public:
    SyntheticImageBackend(ArtifactStore& store, SyntheticTask task)
        : store_(store), task_(std::move(task)) {}

    ImageRef generate_image(const std::string& prompt, long seed) override;
    const SyntheticTask& task() const { return task_; }

private:
    ArtifactStore& store_;
    SyntheticTask task_;
};

}  // namespace t2i::synth
