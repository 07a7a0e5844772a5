#include "t2iopt/synthetic_env.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "t2iopt/png.hpp"

namespace t2i::synth {

using nlohmann::json;

namespace {

const std::vector<std::string> kCountWords = {"zero", "one", "two",   "three", "four",  "five",
                                              "six",  "seven", "eight", "nine",  "ten",   "eleven",
                                              "twelve"};
const std::set<std::string> kColors = {"red",    "blue",  "green",  "yellow", "white",  "black",
                                       "pink",   "purple", "orange", "brown",  "golden", "silver"};
const std::set<std::string> kTextures = {"fluffy", "frosty", "glossy", "velvet", "metallic",
                                         "rough",  "smooth", "furry",  "shiny",  "woolen"};
const std::set<std::string> kStates = {"open",    "closed",  "glowing", "folded", "cracked",
                                       "steaming", "sleeping", "melting", "lit",    "running"};
const std::vector<std::string> kPredicates = {"in",     "on",    "under", "beside",
                                              "behind", "above", "inside", "near"};
const std::set<std::string> kArticles = {"a", "an", "the"};
// Emphasis and filler vocabulary that must never be mistaken for a noun head.
const std::set<std::string> kIgnoreWords = {
    "exactly",  "precisely", "remarkably", "vivid",   "vividly",  "distinctly", "prominently",
    "directly", "clearly",   "detailed",   "consistent", "total",  "all",        "at",
    "and",      "with",      "of",         "very",    "visible",  "sharp",      "focus",
    "carefully", "arranged", "rendered",   "crisp",   "unmistakably", "strictly", "faithfully",
    "over",     "throughout", "visibly",   "its",     "texture",  "indeed",     "everywhere",
    "look",     "overall",   "positioned", "placed",  "present",  "view",       "described",
    "as",       "it",        "faithful"};

bool is_predicate(const std::string& w) {
    return std::find(kPredicates.begin(), kPredicates.end(), w) != kPredicates.end();
}

int count_occurrences(const std::vector<std::string>& tokens, const std::string& word) {
    return static_cast<int>(std::count(tokens.begin(), tokens.end(), word));
}

struct Np {
    std::vector<std::string> tokens;

    bool empty_content() const {
        for (const auto& t : tokens)
            if (!kArticles.count(t) && !kIgnoreWords.count(t) && !count_word_value(t)) return false;
        return true;
    }
};

ObjectFact np_to_fact(const Np& np) {
    ObjectFact f;
    std::string head;
    for (const auto& t : np.tokens) {
        if (kArticles.count(t) || kIgnoreWords.count(t)) continue;
        if (auto c = count_word_value(t)) {
            if (!f.count) f.count = *c;
            continue;
        }
        if (kColors.count(t)) {
            if (!f.color) f.color = t;
            continue;
        }
        if (kTextures.count(t)) {
            if (!f.texture) f.texture = t;
            continue;
        }
        if (kStates.count(t)) {
            if (!f.state) f.state = t;
            continue;
        }
        head = t;  // last unknown token wins ("bamboo steamer" -> "steamer")
    }
    f.noun = head;
    return f;
}

ObjectFact* upsert_object(PromptFacts& facts, const ObjectFact& f) {
    for (auto& o : facts.objects)
        if (o.noun == f.noun) {
            if (f.count && !o.count) o.count = f.count;
            if (f.color && !o.color) o.color = f.color;
            if (f.texture && !o.texture) o.texture = f.texture;
            if (f.state && !o.state) o.state = f.state;
            return &o;
        }
    facts.objects.push_back(f);
    return &facts.objects.back();
}

}  // namespace

std::optional<int> count_word_value(std::string_view word) {
    for (std::size_t i = 0; i < kCountWords.size(); ++i)
        if (word == kCountWords[i]) return static_cast<int>(i);
    if (!word.empty() && std::all_of(word.begin(), word.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return std::stoi(std::string(word));
    return std::nullopt;
}

std::string count_word(int n) {
    if (n >= 0 && n < static_cast<int>(kCountWords.size())) return kCountWords[n];
    return std::to_string(n);
}

const ObjectFact* PromptFacts::find(const std::string& noun) const {
    for (const auto& o : objects)
        if (o.noun == noun) return &o;
    return nullptr;
}

const SceneObject* SceneSpec::find(const std::string& noun) const {
    for (const auto& o : objects)
        if (o.noun == noun) return &o;
    return nullptr;
}

PromptFacts parse_prompt(const std::string& prompt) {
    if (normalize_ws(prompt).empty()) throw GrammarError("parse_prompt: empty prompt");
    PromptFacts facts;

    std::string lowered = to_lower(prompt);
    std::vector<std::string> clauses;
    {
        std::string cur;
        for (char c : lowered) {
            if (c == '.' || c == ';') {
                clauses.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        clauses.push_back(cur);
    }

    for (const auto& clause : clauses) {
        auto tokens = tokenize(clause);
        // strip appositive "in total" before predicate scanning
        for (std::size_t i = 0; i + 1 < tokens.size();) {
            if (tokens[i] == "in" && tokens[i + 1] == "total")
                tokens.erase(tokens.begin() + i, tokens.begin() + i + 2);
            else
                ++i;
        }

        // split the clause into NPs separated by predicates / exclusion markers
        std::vector<std::pair<std::string, Np>> segments;  // (leading marker, NP)
        std::string marker;
        Np cur;
        auto flush = [&]() {
            segments.emplace_back(marker, cur);
            cur = Np{};
        };
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const std::string& t = tokens[i];
            if (is_predicate(t) || t == "without" || t == "no" || t == "against") {
                flush();
                marker = t;
            } else {
                cur.tokens.push_back(t);
            }
        }
        flush();

        std::string subject_noun;
        for (auto& [mark, np] : segments) {
            if (np.empty_content()) continue;
            ObjectFact f = np_to_fact(np);
            if (f.noun.empty()) continue;

            if (mark == "without" || mark == "no") {
                if (std::find(facts.exclusions.begin(), facts.exclusions.end(), f.noun) ==
                    facts.exclusions.end())
                    facts.exclusions.push_back(f.noun);
                continue;
            }
            if (f.noun == "style") {
                // "in watercolor style": the descriptor is whatever else the NP held
                for (const auto& t : np.tokens)
                    if (t != "style" && !kArticles.count(t) && !kIgnoreWords.count(t)) facts.style = t;
                continue;
            }
            if (f.noun == "background") {
                for (const auto& t : np.tokens)
                    if (t != "background" && !kArticles.count(t) && !kIgnoreWords.count(t))
                        facts.background = t;
                continue;
            }
            upsert_object(facts, f);
            if (!mark.empty() && mark != "against" && !subject_noun.empty() && f.noun != subject_noun) {
                bool dup = false;
                for (const auto& r : facts.relations)
                    if (r.subject_noun == subject_noun && r.object_noun == f.noun) dup = true;
                if (!dup) facts.relations.push_back({subject_noun, mark, f.noun});
            }
            if (subject_noun.empty()) subject_noun = f.noun;
        }
    }

    if (facts.objects.empty()) throw GrammarError("parse_prompt: no object found in: " + prompt);
    return facts;
}

// ---- serialization ---------------------------------------------------------

std::string SceneSpec::to_json_string() const {
    json j;
    j["objects"] = json::array();
    for (const auto& o : objects)
        j["objects"].push_back({{"noun", o.noun},
                                {"count", o.count},
                                {"color", o.color},
                                {"texture", o.texture},
                                {"state", o.state}});
    j["relations"] = json::array();
    for (const auto& r : relations)
        j["relations"].push_back({{"subject", r.subject}, {"predicate", r.predicate}, {"object", r.object}});
    j["background"] = background;
    j["style"] = style;
    return j.dump();
}

SceneSpec SceneSpec::from_json_string(const std::string& s) {
    json j = json::parse(s);
    SceneSpec scene;
    for (const auto& o : j.at("objects"))
        scene.objects.push_back({o.at("noun"), o.at("count"), o.at("color"), o.at("texture"), o.at("state")});
    for (const auto& r : j.at("relations"))
        scene.relations.push_back({r.at("subject"), r.at("predicate"), r.at("object")});
    scene.background = j.at("background");
    scene.style = j.at("style");
    return scene;
}

std::string SceneSpec::id() const { return sha256_hex(to_json_string()).substr(0, 16); }

// ---- mitigation ------------------------------------------------------------

double mitigation_multiplier(const PromptFacts& facts, const std::string& prompt_text,
                             Aspect aspect, const std::string& constraint_noun,
                             const std::string& constraint_value) {
    auto tokens = tokenize(prompt_text);
    auto has = [&](const char* w) { return count_occurrences(tokens, w) > 0; };
    auto repeated = [&](const std::string& w) { return !w.empty() && count_occurrences(tokens, w) >= 2; };

    std::vector<double> features;
    if (constraint_value == "excluded") {
        if (has("at") && has("all")) features.push_back(0.2);
        else if (has("completely")) features.push_back(0.2);
        if (repeated(constraint_noun)) features.push_back(0.4);
    } else {
        switch (aspect) {
            case Aspect::Number:
                if (has("exactly") || has("precisely")) features.push_back(0.25);
                if (repeated(constraint_value)) features.push_back(0.4);
                break;
            case Aspect::Color:
                if (repeated(constraint_value)) features.push_back(0.4);
                if (has("vivid") || has("vividly") || has("distinctly")) features.push_back(0.3);
                break;
            case Aspect::Existence:
                if (repeated(constraint_noun)) features.push_back(0.4);
                if (has("prominently")) features.push_back(0.3);
                break;
            case Aspect::Relation:
            case Aspect::Position:
                if (has("directly") || has("clearly")) features.push_back(0.3);
                if (repeated(constraint_value)) features.push_back(0.4);
                break;
            case Aspect::Texture:
                if (repeated(constraint_value)) features.push_back(0.4);
                if (has("detailed")) features.push_back(0.3);
                break;
            case Aspect::State:
                if (repeated(constraint_value)) features.push_back(0.4);
                if (has("clearly")) features.push_back(0.3);
                break;
            case Aspect::Background:
            case Aspect::Style:
                if (repeated(constraint_value)) features.push_back(0.4);
                if (has("consistent")) features.push_back(0.3);
                break;
            default:
                break;
        }
    }
    (void)facts;
    if (features.size() >= 2) return 0.0;
    if (features.size() == 1) return features.front();
    return 1.0;
}

// ---- rendering -------------------------------------------------------------

namespace {

double susceptibility(const SyntheticTask& task, const std::string& aspect) {
    auto it = task.corruption_profile.find(aspect);
    return it == task.corruption_profile.end() ? 0.7 : it->second;
}

bool corrupted(const SyntheticTask& task, const std::string& norm_prompt, long seed,
               const std::string& constraint_id, const std::string& aspect, double mult) {
    double threshold = susceptibility(task, aspect) * mult;
    if (threshold <= 0.0) return false;
    std::uint64_t h = mix_hash({norm_prompt, constraint_id}, static_cast<std::uint64_t>(seed));
    return hash_fraction(h) < threshold;
}

std::uint64_t value_hash(const std::string& norm_prompt, long seed, const std::string& constraint_id) {
    return mix_hash({norm_prompt, constraint_id, "value"}, static_cast<std::uint64_t>(seed));
}

}  // namespace

SceneSpec render_scene(const std::string& prompt, const SyntheticTask& task, long seed) {
    if (normalize_ws(prompt).empty()) throw PreconditionError("render_scene: empty prompt");
    PromptFacts prompt_facts = parse_prompt(prompt);
    PromptFacts canon = parse_prompt(task.prompt);
    std::string norm = normalize_ws(to_lower(prompt));

    SceneSpec scene = task.ground_truth;

    std::set<std::string> removed;
    for (const auto& cf : canon.objects) {
        auto* obj = const_cast<SceneObject*>(scene.find(cf.noun));
        if (!obj) continue;

        double me = mitigation_multiplier(prompt_facts, prompt, Aspect::Existence, cf.noun, "");
        if (corrupted(task, norm, seed, "exist:" + cf.noun, "Existence", me)) {
            removed.insert(cf.noun);
            continue;
        }
        if (cf.count) {
            std::string cw = count_word(*cf.count);
            double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Number, cf.noun, cw);
            if (corrupted(task, norm, seed, "count:" + cf.noun, "Number", m)) {
                int expected = *cf.count;
                std::uint64_t h = value_hash(norm, seed, "count:" + cf.noun);
                int observed = expected >= 2
                                   ? expected - 1 - static_cast<int>(h % static_cast<std::uint64_t>(expected - 1))
                                   : expected + 1;
                obj->count = std::max(1, observed);
            }
        }
        if (cf.color) {
            double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Color, cf.noun, *cf.color);
            if (corrupted(task, norm, seed, "color:" + cf.noun, "Color", m)) {
                std::vector<std::string> palette(kColors.begin(), kColors.end());
                std::uint64_t h = value_hash(norm, seed, "color:" + cf.noun);
                std::string pick = palette[h % palette.size()];
                if (pick == *cf.color) pick = palette[(h + 1) % palette.size()];
                obj->color = pick;
            }
        }
        if (cf.texture) {
            double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Texture, cf.noun, *cf.texture);
            if (corrupted(task, norm, seed, "texture:" + cf.noun, "Texture", m)) obj->texture.clear();
        }
        if (cf.state) {
            double m = mitigation_multiplier(prompt_facts, prompt, Aspect::State, cf.noun, *cf.state);
            if (corrupted(task, norm, seed, "state:" + cf.noun, "State", m)) obj->state.clear();
        }
    }

    for (const auto& rel : canon.relations) {
        double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Relation, rel.subject_noun,
                                         rel.predicate);
        std::string cid = "rel:" + rel.subject_noun + ":" + rel.object_noun;
        if (corrupted(task, norm, seed, cid, "Relation", m)) {
            for (auto& sr : scene.relations) {
                if (sr.subject < static_cast<int>(scene.objects.size()) &&
                    sr.object < static_cast<int>(scene.objects.size()) &&
                    scene.objects[sr.subject].noun == rel.subject_noun &&
                    scene.objects[sr.object].noun == rel.object_noun) {
                    std::uint64_t h = value_hash(norm, seed, cid);
                    std::string pick = kPredicates[h % kPredicates.size()];
                    if (pick == sr.predicate) pick = kPredicates[(h + 1) % kPredicates.size()];
                    sr.predicate = pick;
                }
            }
        }
    }

    for (const auto& excl : canon.exclusions) {
        double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Existence, excl, "excluded");
        if (corrupted(task, norm, seed, "excl:" + excl, "Exclusion", m))
            scene.objects.push_back({excl, 1, "", "", ""});
    }

    if (canon.background) {
        double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Background, "", *canon.background);
        if (corrupted(task, norm, seed, "background", "Background", m)) scene.background = "plain";
    }
    if (canon.style) {
        double m = mitigation_multiplier(prompt_facts, prompt, Aspect::Style, "", *canon.style);
        if (corrupted(task, norm, seed, "style", "Style", m)) scene.style = "generic";
    }

    if (!removed.empty()) {
        // drop removed objects and remap relation indices
        std::vector<int> remap(scene.objects.size(), -1);
        std::vector<SceneObject> kept;
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            if (removed.count(scene.objects[i].noun)) continue;
            remap[i] = static_cast<int>(kept.size());
            kept.push_back(scene.objects[i]);
        }
        std::vector<SceneRelation> rels;
        for (const auto& r : scene.relations) {
            if (r.subject >= static_cast<int>(remap.size()) || r.object >= static_cast<int>(remap.size()))
                continue;
            if (remap[r.subject] < 0 || remap[r.object] < 0) continue;
            rels.push_back({remap[r.subject], r.predicate, remap[r.object]});
        }
        scene.objects = std::move(kept);
        scene.relations = std::move(rels);
    }
    return scene;
}

// ---- VQA oracle ------------------------------------------------------------

VqaVerdict mock_vqa_answer(const SceneSpec& scene, const QuestionItem& question) {
    auto tokens = tokenize(question.question_text);
    auto last = [&](int back) -> std::string {
        int idx = static_cast<int>(tokens.size()) - 1 - back;
        return idx >= 0 ? tokens[idx] : std::string{};
    };

    switch (question.aspect) {
        case Aspect::Existence: {
            std::string noun = last(0);
            bool free_of = question.question_text.find("free of") != std::string::npos;
            const auto* obj = scene.find(noun);
            if (free_of) {
                if (!obj) return {true, noun + " is absent as required"};
                return {false, "the excluded " + noun + " appears in the image"};
            }
            if (obj && obj->count > 0) return {true, noun + " is present"};
            return {false, "the " + noun + " is missing from the image"};
        }
        case Aspect::Number: {
            int expected = -1;
            std::string noun;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (auto c = count_word_value(tokens[i])) {
                    expected = *c;
                    if (i + 1 < tokens.size()) noun = tokens[i + 1];
                }
            }
            if (expected < 0 || noun.empty())
                throw UnsupportedAspect("mock vqa: cannot parse count question: " + question.question_text);
            const auto* obj = scene.find(noun);
            int observed = obj ? obj->count : 0;
            if (observed == expected) return {true, "exactly " + count_word(expected) + " " + noun};
            return {false, "observed " + std::to_string(observed) + " " + noun + ", expected " +
                               std::to_string(expected)};
        }
        case Aspect::Color: {
            std::string expected = last(0), noun = last(1);
            const auto* obj = scene.find(noun);
            if (!obj) return {false, "the " + noun + " is missing from the image"};
            if (obj->color == expected) return {true, "the " + noun + " is " + expected};
            return {false, "the " + noun + " appears " + (obj->color.empty() ? "uncolored" : obj->color) +
                               ", expected " + expected};
        }
        case Aspect::Texture: {
            // "Does the {noun} look {texture}?"
            std::string expected = last(0), noun = last(1) == "look" ? last(2) : last(1);
            const auto* obj = scene.find(noun);
            if (!obj) return {false, "the " + noun + " is missing from the image"};
            if (obj->texture == expected) return {true, "the " + noun + " looks " + expected};
            return {false, "the " + expected + " texture of the " + noun + " is not visible"};
        }
        case Aspect::State: {
            std::string expected = last(0), noun = last(1);
            const auto* obj = scene.find(noun);
            if (!obj) return {false, "the " + noun + " is missing from the image"};
            if (obj->state == expected) return {true, "the " + noun + " is " + expected};
            return {false, "the " + noun + " is not " + expected};
        }
        case Aspect::Relation:
        case Aspect::Position: {
            // "Is the {subj} {pred} the {obj}?"
            std::string obj_noun = last(0), pred, subj;
            for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
                if (is_predicate(tokens[i])) {
                    pred = tokens[i];
                    subj = i >= 1 ? tokens[i - 1] : "";
                }
            if (pred.empty())
                throw UnsupportedAspect("mock vqa: cannot parse relation question: " + question.question_text);
            const auto* s = scene.find(subj);
            const auto* o = scene.find(obj_noun);
            if (!s) return {false, "the " + subj + " is missing from the image"};
            if (!o) return {false, "the " + obj_noun + " is missing from the image"};
            for (const auto& r : scene.relations) {
                if (r.subject < static_cast<int>(scene.objects.size()) &&
                    r.object < static_cast<int>(scene.objects.size()) &&
                    scene.objects[r.subject].noun == subj && scene.objects[r.object].noun == obj_noun) {
                    if (r.predicate == pred) return {true, "the " + subj + " is " + pred + " the " + obj_noun};
                    return {false, "the " + subj + " is " + r.predicate + " the " + obj_noun +
                                       ", expected " + pred};
                }
            }
            return {false, "no spatial relation between " + subj + " and " + obj_noun};
        }
        case Aspect::Background: {
            if (scene.background.empty())
                throw UnsupportedAspect("mock vqa: scene has no background attribute");
            std::string expected = last(0);
            if (scene.background == expected) return {true, "the background is " + expected};
            return {false, "the background is " + scene.background + ", expected " + expected};
        }
        case Aspect::Style: {
            if (scene.style.empty()) throw UnsupportedAspect("mock vqa: scene has no style attribute");
            // "Is the image in {style} style?"
            std::string expected = last(1);
            if (scene.style == expected) return {true, "the style is " + expected};
            return {false, "the style is " + scene.style + ", expected " + expected};
        }
        default:
            throw UnsupportedAspect("mock vqa: unsupported aspect " + aspect_name(question.aspect));
    }
}

std::string describe_scene(const SceneSpec& scene) {
    std::ostringstream out;
    std::vector<bool> described(scene.objects.size(), false);

    auto desc = [&](const SceneObject& o) {
        std::ostringstream d;
        if (o.count != 1)
            d << count_word(o.count) << " ";
        else
            d << "a ";
        if (!o.color.empty()) d << o.color << " ";
        if (!o.texture.empty()) d << o.texture << " ";
        if (!o.state.empty()) d << o.state << " ";
        d << o.noun;
        return d.str();
    };

    for (const auto& r : scene.relations) {
        if (r.subject >= static_cast<int>(scene.objects.size()) ||
            r.object >= static_cast<int>(scene.objects.size()))
            continue;
        out << desc(scene.objects[r.subject]) << " " << r.predicate << " "
            << desc(scene.objects[r.object]) << ". ";
        described[r.subject] = true;
        described[r.object] = true;
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
        if (!described[i]) out << desc(scene.objects[i]) << ". ";
    if (!scene.background.empty()) out << "against a " << scene.background << " background. ";
    if (!scene.style.empty()) out << "in " << scene.style << " style. ";
    return normalize_ws(out.str());
}

std::vector<QuestionItem> questions_for_facts(const PromptFacts& facts, int target_piece) {
    std::vector<QuestionItem> qs;
    int id = 0;
    auto push = [&](Aspect a, std::string text) {
        qs.push_back({id++, target_piece, a, std::move(text)});
    };

    for (const auto& o : facts.objects) {
        push(Aspect::Existence, "Is there at least one " + o.noun + "?");
        if (o.count)
            push(Aspect::Number, "Are there exactly " + count_word(*o.count) + " " + o.noun + "?");
        if (o.color) push(Aspect::Color, "Is the " + o.noun + " " + *o.color + "?");
        if (o.texture) push(Aspect::Texture, "Does the " + o.noun + " look " + *o.texture + "?");
        if (o.state) push(Aspect::State, "Is the " + o.noun + " " + *o.state + "?");
    }
    for (const auto& r : facts.relations)
        push(Aspect::Relation,
             "Is the " + r.subject_noun + " " + r.predicate + " the " + r.object_noun + "?");
    for (const auto& e : facts.exclusions)
        push(Aspect::Existence, "Is the image completely free of " + e + "?");
    if (facts.background) push(Aspect::Background, "Is the background " + *facts.background + "?");
    if (facts.style) push(Aspect::Style, "Is the image in " + *facts.style + " style?");
    return qs;
}

// ---- placeholder PNG -------------------------------------------------------

std::string scene_to_png(const SceneSpec& scene) {
    constexpr std::uint32_t kCell = 8;
    std::uint32_t rows = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(scene.objects.size()));
    std::uint32_t cols = 12;
    std::uint32_t w = cols * kCell, h = rows * kCell;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3, 230);

    for (std::uint32_t r = 0; r < scene.objects.size(); ++r) {
        const auto& o = scene.objects[r];
        std::uint64_t ch = fnv1a64(o.noun + o.color);
        std::uint8_t cr = static_cast<std::uint8_t>(ch & 0xFF);
        std::uint8_t cg = static_cast<std::uint8_t>((ch >> 8) & 0xFF);
        std::uint8_t cb = static_cast<std::uint8_t>((ch >> 16) & 0xFF);
        int filled = std::min<int>(o.count, static_cast<int>(cols));
        for (int c = 0; c < filled; ++c)
            for (std::uint32_t y = r * kCell; y < (r + 1) * kCell; ++y)
                for (std::uint32_t x = c * kCell; x < (c + 1) * kCell; ++x) {
                    std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
                    rgb[p] = cr;
                    rgb[p + 1] = cg;
                    rgb[p + 2] = cb;
                }
    }
    return png::encode_rgb(w, h, rgb, {{"scene", scene.to_json_string()}});
}

SceneSpec scene_from_png(const std::string& png_bytes) {
    auto text = png::read_text_chunk(png_bytes, "scene");
    if (!text) throw PreconditionError("scene_from_png: no scene chunk");
    return SceneSpec::from_json_string(*text);
}

// ---- tasks -----------------------------------------------------------------

SyntheticTask baozi_task() {
    SyntheticTask t;
    t.task_id = "baozi";
    t.prompt = "six baozi in a bamboo steamer";
    SceneSpec gt;
    gt.objects.push_back({"baozi", 6, "", "", ""});
    gt.objects.push_back({"steamer", 1, "", "", ""});
    gt.relations.push_back({0, "in", 1});
    t.ground_truth = gt;
    t.corruption_profile = {{"Number", 0.95}, {"Existence", 0.05}, {"Relation", 0.25}};
    return t;
}

std::vector<SyntheticTask> generate_tasks(int count, long seed) {
    if (count < 1) throw PreconditionError("generate_tasks: count must be >= 1");

    const std::vector<std::string> count_nouns = {"baozi", "dumplings", "apples", "cups",
                                                  "candles", "books", "balloons"};
    const std::vector<std::string> containers = {"basket", "bowl", "steamer", "box", "tray"};
    const std::vector<std::string> color_nouns = {"apple", "cup", "vase", "chair", "kite"};
    const std::vector<std::string> colors = {"red", "blue", "green", "yellow", "purple", "orange"};
    const std::vector<std::string> spatial_nouns = {"cat", "dog", "lamp", "ball", "bird", "clock"};
    const std::vector<std::string> spatial_preds = {"above", "under", "behind", "beside"};
    const std::vector<std::string> dishes = {"pizza", "salad", "burger", "sandwich"};
    const std::vector<std::string> ingredients = {"onions", "olives", "tomatoes", "pickles"};
    const std::vector<std::string> textures = {"fluffy", "frosty", "glossy", "velvet"};
    const std::vector<std::string> texture_nouns = {"blanket", "mirror", "cushion", "board"};
    const std::vector<std::string> surfaces = {"table", "shelf", "bench", "desk"};
    const std::vector<std::string> states = {"glowing", "open", "folded", "cracked"};
    const std::vector<std::string> state_nouns = {"lantern", "book", "umbrella", "mug"};

    std::vector<SyntheticTask> tasks;
    tasks.reserve(count);
    for (int i = 0; i < count; ++i) {
        std::uint64_t h = mix_hash({"task", std::to_string(i)}, static_cast<std::uint64_t>(seed));
        auto pick = [&](const std::vector<std::string>& v, int salt) {
            return v[mix_hash({"pick", std::to_string(i), std::to_string(salt)},
                              static_cast<std::uint64_t>(seed)) %
                     v.size()];
        };
        SyntheticTask t;
        t.task_id = "task-" + std::to_string(i);
        t.seed = seed;
        SceneSpec gt;
        int kind = i % 6;
        switch (kind) {
            case 0: {  // count
                int n = 3 + static_cast<int>(h % 6);
                std::string noun = pick(count_nouns, 1), box = pick(containers, 2);
                t.prompt = count_word(n) + " " + noun + " in a " + box;
                gt.objects.push_back({noun, n, "", "", ""});
                gt.objects.push_back({box, 1, "", "", ""});
                gt.relations.push_back({0, "in", 1});
                t.corruption_profile = {{"Number", 0.92}, {"Existence", 0.08}, {"Relation", 0.2}};
                break;
            }
            case 1: {  // color binding
                std::string n1 = pick(color_nouns, 1), n2 = pick(color_nouns, 2);
                if (n2 == n1) n2 = color_nouns[(std::find(color_nouns.begin(), color_nouns.end(), n1) -
                                                color_nouns.begin() + 1) %
                                               color_nouns.size()];
                std::string c1 = pick(colors, 3), c2 = pick(colors, 4);
                if (c2 == c1) c2 = colors[(std::find(colors.begin(), colors.end(), c1) - colors.begin() + 1) %
                                          colors.size()];
                t.prompt = "a " + c1 + " " + n1 + " beside a " + c2 + " " + n2;
                gt.objects.push_back({n1, 1, c1, "", ""});
                gt.objects.push_back({n2, 1, c2, "", ""});
                gt.relations.push_back({0, "beside", 1});
                t.corruption_profile = {{"Color", 0.9}, {"Existence", 0.08}, {"Relation", 0.2}};
                break;
            }
            case 2: {  // spatial relation
                std::string n1 = pick(spatial_nouns, 1), n2 = pick(spatial_nouns, 2);
                if (n2 == n1)
                    n2 = spatial_nouns[(std::find(spatial_nouns.begin(), spatial_nouns.end(), n1) -
                                        spatial_nouns.begin() + 1) %
                                       spatial_nouns.size()];
                std::string pred = pick(spatial_preds, 3);
                t.prompt = "a " + n1 + " " + pred + " a " + n2;
                gt.objects.push_back({n1, 1, "", "", ""});
                gt.objects.push_back({n2, 1, "", "", ""});
                gt.relations.push_back({0, pred, 1});
                t.corruption_profile = {{"Relation", 0.9}, {"Existence", 0.08}};
                break;
            }
            case 3: {  // exclusion
                std::string dish = pick(dishes, 1), ing = pick(ingredients, 2);
                t.prompt = "a " + dish + " without " + ing;
                gt.objects.push_back({dish, 1, "", "", ""});
                t.corruption_profile = {{"Exclusion", 0.9}, {"Existence", 0.08}};
                break;
            }
            case 4: {  // texture
                std::string tex = pick(textures, 1), noun = pick(texture_nouns, 2), surf = pick(surfaces, 3);
                t.prompt = "a " + tex + " " + noun + " on a " + surf;
                gt.objects.push_back({noun, 1, "", tex, ""});
                gt.objects.push_back({surf, 1, "", "", ""});
                gt.relations.push_back({0, "on", 1});
                t.corruption_profile = {{"Texture", 0.9}, {"Existence", 0.08}, {"Relation", 0.2}};
                break;
            }
            default: {  // state
                std::string st = pick(states, 1), noun = pick(state_nouns, 2), n2 = pick(spatial_nouns, 3);
                t.prompt = "a " + st + " " + noun + " beside a " + n2;
                gt.objects.push_back({noun, 1, "", "", st});
                gt.objects.push_back({n2, 1, "", "", ""});
                gt.relations.push_back({0, "beside", 1});
                t.corruption_profile = {{"State", 0.9}, {"Existence", 0.08}, {"Relation", 0.2}};
                break;
            }
        }
        t.ground_truth = gt;
        tasks.push_back(std::move(t));
    }
    return tasks;
}

// ---- T2I backend -----------------------------------------------------------

ImageRef SyntheticImageBackend::generate_image(const std::string& prompt, long seed) {
    if (normalize_ws(prompt).empty()) throw PreconditionError("generate_image: empty prompt");
    SceneSpec scene = render_scene(prompt, task_, seed);
    std::string bytes = scene_to_png(scene);
    return store_.put(bytes, "image/png", Provenance::Synthetic,
                      sha256_hex(prompt).substr(0, 12), scene.id());
}

}  // namespace t2i::synth
