#include "t2iopt/synthetic_agents.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace t2i::synth {

using nlohmann::json;

namespace {

const std::vector<std::string> kWeakTails = {
    ", carefully arranged", ", in sharp focus", ", rendered crisp", ", unmistakably faithful"};

// Distinct fillers drawn from the parser's ignore vocabulary so they never
// introduce phantom objects into the closed-world grammar.
const std::vector<std::string> kVariantTails = {
    "",
    ", carefully arranged",
    ", in sharp focus",
    ", rendered crisp",
    ", strictly faithfully rendered",
    ", unmistakably visible",
};

// A rewrite instruction that names nothing from the sentence carries no usable
// signal; the agent then only appends generic emphasis instead of inventing a
// specific mitigation.
bool explanation_mentions_scene(const PromptFacts& facts, const std::string& explanation) {
    std::set<std::string> vocab;
    for (const auto& o : facts.objects) {
        vocab.insert(o.noun);
        if (o.count) vocab.insert(count_word(*o.count));
        if (o.color) vocab.insert(*o.color);
        if (o.texture) vocab.insert(*o.texture);
        if (o.state) vocab.insert(*o.state);
    }
    for (const auto& r : facts.relations) {
        vocab.insert(r.subject_noun);
        vocab.insert(r.predicate);
        vocab.insert(r.object_noun);
    }
    for (const auto& e : facts.exclusions) vocab.insert(e);
    if (facts.background) vocab.insert(*facts.background);
    if (facts.style) vocab.insert(*facts.style);
    for (const auto& tok : tokenize(explanation))
        if (vocab.count(tok)) return true;
    return false;
}

std::string find_target_noun(const PromptFacts& facts, const std::string& explanation) {
    for (const auto& tok : tokenize(explanation))
        if (facts.find(tok)) return tok;
    return facts.objects.empty() ? std::string{} : facts.objects.front().noun;
}

std::string replace_once(const std::string& text, const std::string& from, const std::string& to) {
    auto pos = text.find(from);
    if (pos == std::string::npos) return text;
    return text.substr(0, pos) + to + text.substr(pos + from.size());
}

int severity_for(Aspect a) {
    switch (a) {
        case Aspect::Existence:
        case Aspect::Number:
            return 3;
        case Aspect::Background:
        case Aspect::Style:
            return 1;
        default:
            return 2;
    }
}

bool scene_payload_image(const ChatRequest& request, ArtifactStore& store, SceneSpec& out) {
    for (const auto& part : request.user_parts) {
        if (part.kind == ChatPart::Kind::Image) {
            out = scene_from_png(store.resolve(part.image));
            return true;
        }
    }
    throw MalformedReply("synthetic agent: request carries no image");
}

json last_payload(const ChatRequest& request) {
    for (auto it = request.user_parts.rbegin(); it != request.user_parts.rend(); ++it) {
        if (it->kind != ChatPart::Kind::Text) continue;
        auto j = json::parse(it->text, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("task")) return j;
    }
    throw MalformedReply("synthetic agent: no task payload in request");
}

QuestionItem question_from_json(const json& q) {
    QuestionItem item;
    item.id = q.value("id", 0);
    item.target = q.value("target", 0);
    item.aspect = aspect_from_name(q.value("aspect", "Existence")).value_or(Aspect::Existence);
    item.question_text = q.value("text", "");
    return item;
}

}  // namespace

std::string rewrite_variant(const std::string& sentence, Aspect category,
                            const std::string& explanation, int variant) {
    PromptFacts facts;
    try {
        facts = parse_prompt(sentence);
    } catch (const GrammarError&) {
        return sentence + kVariantTails[1 + variant % (kVariantTails.size() - 1)];
    }
    if (!explanation_mentions_scene(facts, explanation))
        return sentence + kWeakTails[variant % kWeakTails.size()] +
               kVariantTails[(variant / kWeakTails.size()) % kVariantTails.size()];
    std::string noun = find_target_noun(facts, explanation);
    const ObjectFact* obj = facts.find(noun);
    bool exclusion = explanation.find("excluded") != std::string::npos ||
                     explanation.find("free of") != std::string::npos;
    for (const auto& tok : tokenize(explanation))
        if (std::find(facts.exclusions.begin(), facts.exclusions.end(), tok) != facts.exclusions.end()) {
            exclusion = true;
            noun = tok;
        }

    constexpr int kRecipes = 5;
    int recipe = variant % kRecipes;
    std::string tail = kVariantTails[(variant / kRecipes) % kVariantTails.size()];
    std::string out = sentence;

    if (exclusion) {
        switch (recipe) {
            case 0: out = replace_once(sentence, "without " + noun, "completely without " + noun); break;
            case 1: out = sentence + ", no " + noun + " at all"; break;
            case 2:
                out = replace_once(sentence, "without " + noun, "completely without " + noun) + ", no " +
                      noun + " at all";
                break;
            case 3: out = sentence + ", completely free of " + noun + ", no " + noun + " at all"; break;
            default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
        }
        return out + tail;
    }

    switch (category) {
        case Aspect::Number: {
            std::string cw = obj && obj->count ? count_word(*obj->count) : "";
            if (cw.empty()) return sentence + tail;
            std::string phrase = cw + " " + noun;
            if (sentence.find(phrase) == std::string::npos) {
                switch (recipe) {
                    case 0: out = sentence + ", exactly " + phrase; break;
                    case 1: out = sentence + ", " + cw + " in total"; break;
                    case 2: out = sentence + ", precisely " + phrase; break;
                    case 3: out = sentence + ", exactly " + phrase + ", " + cw + " in total"; break;
                    default:
                        out = sentence + ", remarkably, exactly " + phrase + ", " + cw + " in total";
                        break;
                }
                break;
            }
            switch (recipe) {
                case 0: out = replace_once(sentence, phrase, "exactly " + phrase); break;
                case 1: out = replace_once(sentence, phrase, phrase + ", " + cw + " in total"); break;
                case 2: out = replace_once(sentence, phrase, "precisely " + phrase); break;
                case 3:
                    out = replace_once(sentence, phrase, "exactly " + phrase + ", " + cw + " in total");
                    break;
                default:
                    out = replace_once(sentence, phrase,
                                       "remarkably, exactly " + phrase + ", " + cw + " in total");
                    break;
            }
            break;
        }
        case Aspect::Color: {
            std::string c = obj && obj->color ? *obj->color : "";
            if (c.empty()) return sentence + tail;
            std::string phrase = c + " " + noun;
            switch (recipe) {
                case 0: out = replace_once(sentence, phrase, "vivid " + phrase); break;
                case 1: out = replace_once(sentence, phrase, phrase + ", distinctly " + c); break;
                case 2: out = replace_once(sentence, phrase, "vivid " + phrase + ", clearly " + c); break;
                case 3: out = sentence + ", the " + noun + " vividly " + c + " all over"; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        case Aspect::Existence: {
            if (noun.empty()) return sentence + tail;
            switch (recipe) {
                case 0: out = sentence + ", the " + noun + " prominently visible"; break;
                case 1: out = sentence + ", with the " + noun + " clearly present"; break;
                case 2: out = replace_once(sentence, noun, "prominently placed " + noun); break;
                case 3: out = sentence + ", the " + noun + " prominently in view, a clear " + noun; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        case Aspect::Relation:
        case Aspect::Position: {
            std::string pred = facts.relations.empty() ? "" : facts.relations.front().predicate;
            for (const auto& tok : tokenize(explanation))
                for (const auto& r : facts.relations)
                    if (tok == r.predicate) pred = tok;
            if (pred.empty()) return sentence + tail;
            switch (recipe) {
                case 0: out = replace_once(sentence, " " + pred + " ", " directly " + pred + " "); break;
                case 1: out = sentence + ", positioned " + pred + " it"; break;
                case 2:
                    out = replace_once(sentence, " " + pred + " ", " directly " + pred + " ") +
                          ", clearly " + pred + " it";
                    break;
                case 3: out = sentence + ", clearly " + pred + " it, " + pred + " exactly as described"; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        case Aspect::Texture: {
            std::string tex = obj && obj->texture ? *obj->texture : "";
            if (tex.empty()) return sentence + tail;
            std::string phrase = tex + " " + noun;
            switch (recipe) {
                case 0: out = replace_once(sentence, phrase, "detailed " + phrase); break;
                case 1: out = replace_once(sentence, phrase, phrase + ", visibly " + tex); break;
                case 2:
                    out = replace_once(sentence, phrase, "detailed " + phrase + ", " + tex + " all over");
                    break;
                case 3: out = sentence + ", its " + tex + " texture detailed and " + tex + " throughout"; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        case Aspect::State: {
            std::string st = obj && obj->state ? *obj->state : "";
            if (st.empty()) return sentence + tail;
            std::string phrase = st + " " + noun;
            switch (recipe) {
                case 0: out = replace_once(sentence, phrase, "clearly " + phrase); break;
                case 1: out = replace_once(sentence, phrase, phrase + ", visibly " + st); break;
                case 2: out = replace_once(sentence, phrase, "clearly " + phrase + ", " + st + " indeed"); break;
                case 3: out = sentence + ", the " + noun + " clearly " + st + ", " + st + " throughout"; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        case Aspect::Background:
        case Aspect::Style: {
            std::string val = category == Aspect::Background
                                  ? facts.background.value_or("")
                                  : facts.style.value_or("");
            if (val.empty()) return sentence + tail;
            switch (recipe) {
                case 0: out = sentence + ", consistent " + val + " throughout"; break;
                case 1: out = sentence + ", " + val + " everywhere, " + val + " indeed"; break;
                case 2: out = sentence + ", consistent " + val + ", " + val + " throughout"; break;
                case 3: out = sentence + ", a consistent and " + val + " look, " + val + " overall"; break;
                default: out = sentence + kWeakTails[variant % kWeakTails.size()]; break;
            }
            break;
        }
        default:
            out = sentence + kWeakTails[variant % kWeakTails.size()];
            break;
    }
    return out + tail;
}

ChatResponse SyntheticAgentBackend::chat_once(const ChatRequest& request) {
    json payload = last_payload(request);
    std::string task = payload.at("task");
    json reply;

    if (task == "decompose") {
        std::string prompt = payload.at("prompt");
        std::vector<std::string> clauses;
        std::string cur;
        for (char c : prompt) {
            if (c == '.' || c == ';') {
                clauses.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        clauses.push_back(cur);
        reply["pieces"] = json::array();
        int idx = 0;
        for (auto& clause : clauses) {
            std::string text = normalize_ws(clause);
            if (text.empty()) continue;
            std::string kind = "Object";
            auto toks = tokenize(text);
            for (const auto& t : toks)
                if (t == "style" || t == "background") kind = "Background";
            if (kind == "Object")
                for (const auto& t : toks)
                    if (t == "in" || t == "on" || t == "under" || t == "beside" || t == "behind" ||
                        t == "above" || t == "inside" || t == "near")
                        kind = "Relationship";
            reply["pieces"].push_back({{"index", idx++}, {"text", text}, {"kind", kind}});
        }
    } else if (task == "generate_questions") {
        reply["questions"] = json::array();
        int id = 0;
        for (const auto& piece : payload.at("pieces")) {
            std::string text = piece.at("text");
            int target = piece.at("index");
            std::vector<QuestionItem> qs;
            try {
                qs = questions_for_facts(parse_prompt(text), target);
            } catch (const GrammarError&) {
                auto toks = tokenize(text);
                qs.push_back({0, target, Aspect::Existence,
                              "Is there at least one " + (toks.empty() ? "object" : toks.back()) + "?"});
            }
            for (auto& q : qs)
                reply["questions"].push_back({{"id", id++},
                                              {"target", q.target},
                                              {"aspect", aspect_name(q.aspect)},
                                              {"text", q.question_text}});
        }
    } else if (task == "vqa_answer") {
        SceneSpec scene;
        scene_payload_image(request, store_, scene);
        QuestionItem q = question_from_json(payload.at("question"));
        VqaVerdict v = mock_vqa_answer(scene, q);
        reply["label"] = v.yes ? "YES" : "NO";
        reply["explanation"] = v.explanation;
    } else if (task == "caption") {
        SceneSpec scene;
        scene_payload_image(request, store_, scene);
        reply["caption"] = describe_scene(scene);
    } else if (task == "caption_compare") {
        std::string prompt = payload.at("prompt");
        std::string caption = payload.at("caption");
        PromptFacts want = parse_prompt(prompt);
        PromptFacts got;
        bool caption_parsed = true;
        try {
            got = parse_prompt(caption);
        } catch (const GrammarError&) {
            caption_parsed = false;
        }
        reply["errors"] = json::array();
        auto add = [&](Aspect a, const std::string& expl) {
            reply["errors"].push_back({{"category", aspect_name(a)}, {"explanation", expl}});
        };
        if (caption_parsed) {
            for (const auto& o : want.objects) {
                const ObjectFact* c = got.find(o.noun);
                if (!c) {
                    add(Aspect::Existence, "the " + o.noun + " is missing from the image");
                    continue;
                }
                if (o.count && c->count.value_or(1) != *o.count)
                    add(Aspect::Number, "the prompt asks for " + count_word(*o.count) + " " + o.noun +
                                            " but the caption shows " +
                                            count_word(c->count.value_or(1)));
                if (o.color && c->color.value_or("") != *o.color)
                    add(Aspect::Color, "the " + o.noun + " should be " + *o.color + " but appears " +
                                           c->color.value_or("uncolored"));
                if (o.texture && c->texture.value_or("") != *o.texture)
                    add(Aspect::Texture,
                        "the " + *o.texture + " texture of the " + o.noun + " is not visible");
                if (o.state && c->state.value_or("") != *o.state)
                    add(Aspect::State, "the " + o.noun + " is not " + *o.state);
            }
            for (const auto& r : want.relations) {
                bool found = false, mismatched = false;
                std::string actual;
                for (const auto& g : got.relations)
                    if (g.subject_noun == r.subject_noun && g.object_noun == r.object_noun) {
                        found = true;
                        if (g.predicate != r.predicate) {
                            mismatched = true;
                            actual = g.predicate;
                        }
                    }
                if (!found && got.find(r.subject_noun) && got.find(r.object_noun))
                    add(Aspect::Relation,
                        "no clear relation between " + r.subject_noun + " and " + r.object_noun);
                else if (mismatched)
                    add(Aspect::Relation, "the " + r.subject_noun + " is " + actual + " the " +
                                              r.object_noun + " instead of " + r.predicate);
            }
            for (const auto& e : want.exclusions)
                if (got.find(e))
                    add(Aspect::Existence, "the excluded " + e + " appears in the image");
            if (want.background && got.background.value_or("") != *want.background)
                add(Aspect::Background, "the background is not " + *want.background);
            if (want.style && got.style.value_or("") != *want.style)
                add(Aspect::Style, "the style is not " + *want.style);
        }
    } else if (task == "integrate") {
        std::string prompt = payload.at("prompt");
        PromptFacts facts = parse_prompt(prompt);
        reply["errors"] = json::array();
        reply["rejected"] = json::array();
        // verified union keyed on (category, target noun)
        std::set<std::string> seen;
        auto consume = [&](const json& errs) {
            for (const auto& e : errs) {
                std::string cat = e.at("category");
                std::string expl = e.at("explanation");
                std::string noun = find_target_noun(facts, expl);
                std::string key = cat + ":" + noun;
                if (!seen.insert(key).second) continue;  // merged with a duplicate
                Aspect a = aspect_from_name(cat).value_or(Aspect::Existence);
                reply["errors"].push_back(
                    {{"category", cat}, {"explanation", expl}, {"severity", severity_for(a)}});
            }
        };
        consume(payload.at("vqa_errors"));
        consume(payload.at("caption_errors"));
    } else if (task == "map_errors") {
        reply["mappings"] = json::array();
        const auto& pieces = payload.at("pieces");
        int ei = 0;
        for (const auto& e : payload.at("errors")) {
            auto etoks = tokenize(e.at("explanation").get<std::string>());
            std::set<std::string> eset(etoks.begin(), etoks.end());
            int best = 0, best_overlap = -1, pi = 0;
            for (const auto& piece : pieces) {
                int overlap = 0;
                for (const auto& t : tokenize(piece.at("text").get<std::string>()))
                    if (eset.count(t)) ++overlap;
                if (overlap > best_overlap) {
                    best_overlap = overlap;
                    best = pi;
                }
                ++pi;
            }
            reply["mappings"].push_back({{"error_index", ei++},
                                         {"sentence_index", best},
                                         {"rationale", "keyword overlap " + std::to_string(best_overlap)}});
        }
    } else if (task == "propose") {
        std::string sentence = payload.at("sentence");
        int n = payload.at("n");
        Aspect cat =
            aspect_from_name(payload.at("error").at("category").get<std::string>()).value_or(Aspect::Existence);
        std::string expl = payload.at("error").at("explanation");
        reply["candidates"] = json::array();
        std::set<std::string> emitted;
        int variant = 0;
        while (static_cast<int>(emitted.size()) < n && variant < n * 8 + 64) {
            std::string cand = rewrite_variant(sentence, cat, expl, variant++);
            if (cand == sentence) continue;
            if (emitted.insert(cand).second) reply["candidates"].push_back(cand);
        }
        // pad in the degenerate case so the contract of n candidates holds
        while (static_cast<int>(reply["candidates"].size()) < n)
            reply["candidates"].push_back(sentence + kVariantTails[1]);
    } else if (task == "merge") {
        std::string prompt = normalize_ws(payload.at("prompt").get<std::string>());
        std::string sentence = normalize_ws(payload.at("sentence").get<std::string>());
        std::string modified = normalize_ws(payload.at("modified").get<std::string>());
        auto pos = prompt.find(sentence);
        std::string merged = pos == std::string::npos
                                 ? prompt + ". " + modified
                                 : prompt.substr(0, pos) + modified + prompt.substr(pos + sentence.size());
        reply["merged"] = merged;
    } else if (task == "rate") {
        std::string label = to_upper(payload.at("finding").at("label").get<std::string>());
        std::string note = payload.at("finding").at("explanation");
        int rating = 5;
        if (label != "YES") {
            rating = 2;
            // graded count mismatch: "observed 3 ..., expected 6"
            auto toks = tokenize(note);
            int observed = -1, expected = -1;
            for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
                if (toks[i] == "observed")
                    if (auto v = count_word_value(toks[i + 1])) observed = *v;
                if (toks[i] == "expected")
                    if (auto v = count_word_value(toks[i + 1])) expected = *v;
            }
            if (observed >= 0 && expected >= 0) rating = std::max(1, 5 - std::abs(expected - observed));
        }
        reply["rating"] = rating;
        reply["note"] = note;
    } else if (task == "summarize") {
        std::ostringstream out;
        out << "attempted " << payload.at("candidates").size() << " sampled prompts; ";
        const auto& errs = payload.at("errors");
        if (errs.empty()) {
            out << "no remaining issues";
        } else {
            out << "remaining issues:";
            int shown = 0;
            for (const auto& e : errs) {
                if (shown++ >= 3) break;
                out << " " << e.at("category").get<std::string>() << " ("
                    << e.at("explanation").get<std::string>() << ");";
            }
        }
        double best = 0.0;
        for (const auto& s : payload.at("scores")) best = std::max(best, s.get<double>());
        out << " best sampled score " << best;
        reply["summary"] = out.str();
    } else {
        throw MalformedReply("synthetic agent: unknown task " + task);
    }

    return {reply.dump(), 0, 0, id()};
}

}  // namespace t2i::synth
