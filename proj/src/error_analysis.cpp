#include "t2iopt/error_analysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace t2i {

using nlohmann::json;

namespace {

const std::set<std::string> kFunctionWords = {"a", "an", "the", "and", "of", "with", "is", "are"};

json pieces_to_json(const std::vector<MetaSentence>& pieces) {
    json arr = json::array();
    for (const auto& p : pieces)
        arr.push_back({{"index", p.index}, {"text", p.text}, {"kind", piece_kind_name(p.kind)}});
    return arr;
}

json errors_to_json(const ErrorSet& set) {
    json arr = json::array();
    for (const auto& r : set.records)
        arr.push_back({{"category", aspect_name(r.category)}, {"explanation", r.explanation}});
    return arr;
}

ChatRequest make_request(std::string system_text, json payload,
                         const ImageRef* image = nullptr,
                         ResponseHint hint = ResponseHint::StrictJson) {
    ChatRequest req;
    req.system_text = std::move(system_text);
    if (image) req.user_parts.push_back(ChatPart::image_part(*image));
    req.user_parts.push_back(ChatPart::text_part(payload.dump()));
    req.response_hint = hint;
    return req;
}

}  // namespace

std::vector<std::string> content_words(const std::string& text) {
    std::vector<std::string> out;
    for (auto& t : tokenize(text))
        if (!kFunctionWords.count(t)) out.push_back(std::move(t));
    return out;
}

bool parse_yes_no(const std::string& reply_text) {
    for (const auto& tok : tokenize(reply_text)) {
        std::string up = to_upper(tok);
        if (up == "YES") return true;
        if (up == "NO") return false;
    }
    throw UnparseableLabel("reply contains neither YES nor NO: " + reply_text.substr(0, 120));
}

std::vector<MetaSentence> ErrorAnalyzer::decompose_prompt(const std::string& prompt) const {
    if (normalize_ws(prompt).empty()) throw PreconditionError("decompose_prompt: empty prompt");

    // chunk long prompts at sentence boundaries and re-index
    if (prompt.size() > kChunkChars) {
        std::vector<MetaSentence> all;
        std::string chunk;
        auto flush = [&]() {
            if (normalize_ws(chunk).empty()) return;
            for (auto piece : decompose_prompt(chunk)) {
                piece.index = static_cast<int>(all.size());
                all.push_back(std::move(piece));
            }
            chunk.clear();
        };
        std::istringstream in(prompt);
        std::string sentence;
        while (std::getline(in, sentence, '.')) {
            chunk += sentence + ".";
            if (chunk.size() >= kChunkChars) flush();
        }
        flush();
        return all;
    }

    auto parse_reply = [&](const ChatResponse& resp) {
        json j = parse_strict_json(resp.text);
        std::vector<MetaSentence> pieces;
        for (const auto& p : j.at("pieces")) {
            MetaSentence ms;
            ms.index = p.at("index");
            ms.text = p.at("text");
            ms.kind = piece_kind_from_name(p.value("kind", "Object")).value_or(PieceKind::Object);
            pieces.push_back(std::move(ms));
        }
        if (pieces.empty()) throw MalformedReply("decompose: no pieces");
        for (std::size_t i = 0; i < pieces.size(); ++i)
            if (pieces[i].index != static_cast<int>(i))
                throw MalformedReply("decompose: piece indices not contiguous");
        return pieces;
    };

    auto missing_words = [&](const std::vector<MetaSentence>& pieces) {
        std::multiset<std::string> covered;
        for (const auto& p : pieces)
            for (auto& t : content_words(p.text)) covered.insert(t);
        std::vector<std::string> missing;
        for (const auto& w : content_words(prompt)) {
            auto it = covered.find(w);
            if (it == covered.end())
                missing.push_back(w);
            else
                covered.erase(it);
        }
        return missing;
    };

    ChatRequest req = make_request(templates_.expand("decompose", {{"prompt", prompt}}),
                                   json{{"task", "decompose"}, {"prompt", prompt}});
    auto pieces = parse_reply(chat_.chat(req));
    auto missing = missing_words(pieces);
    if (!missing.empty()) {
        std::string repair = "Your pieces dropped these content words:";
        for (const auto& w : missing) repair += " " + w;
        repair += ". Split the prompt again without losing any word.";
        req.user_parts.push_back(ChatPart::text_part(repair));
        pieces = parse_reply(chat_.chat(req));
        missing = missing_words(pieces);
        if (!missing.empty())
            throw CoverageFailure("decompose: pieces drop content words after repair: " + missing.front());
    }
    return pieces;
}

std::vector<QuestionItem> ErrorAnalyzer::generate_questions(
    const std::vector<MetaSentence>& pieces) const {
    if (pieces.empty()) throw PreconditionError("generate_questions: pieces must be non-empty");

    auto parse_reply = [&](const ChatResponse& resp) {
        json j = parse_strict_json(resp.text);
        std::vector<QuestionItem> qs;
        for (const auto& q : j.at("questions")) {
            QuestionItem item;
            item.id = q.at("id");
            item.target = q.at("target");
            auto a = aspect_from_name(q.at("aspect").get<std::string>());
            if (!a) throw MalformedReply("generate_questions: unknown aspect");
            item.aspect = *a;
            item.question_text = q.at("text");
            if (item.target < 0 || item.target >= static_cast<int>(pieces.size()))
                throw MalformedReply("generate_questions: target out of range");
            qs.push_back(std::move(item));
        }
        return qs;
    };

    auto coverage_gap = [&](const std::vector<QuestionItem>& qs) -> std::optional<int> {
        for (const auto& p : pieces) {
            bool targeted = false, existence = false;
            for (const auto& q : qs)
                if (q.target == p.index) {
                    targeted = true;
                    if (q.aspect == Aspect::Existence) existence = true;
                }
            if (!targeted) return p.index;
            if (p.kind == PieceKind::Object && !existence) return p.index;
        }
        return std::nullopt;
    };

    ChatRequest req =
        make_request(templates_.expand("generate_questions", {{"pieces", pieces_to_json(pieces).dump()}}),
                     json{{"task", "generate_questions"}, {"pieces", pieces_to_json(pieces)}});
    auto qs = parse_reply(chat_.chat(req));
    if (auto gap = coverage_gap(qs)) {
        req.user_parts.push_back(ChatPart::text_part(
            "Piece " + std::to_string(*gap) +
            " is not fully covered. Generate the questions again, covering every piece and "
            "including an existence question for every object piece."));
        qs = parse_reply(chat_.chat(req));
        if (auto gap2 = coverage_gap(qs))
            throw IncompleteCoverage("generate_questions: piece " + std::to_string(*gap2) +
                                     " untargeted after repair");
    }
    return qs;
}

ErrorSet ErrorAnalyzer::answer_questions(const ImageRef& image,
                                         const std::vector<QuestionItem>& questions) const {
    if (questions.empty()) throw PreconditionError("answer_questions: questions must be non-empty");

    std::vector<QuestionItem> sorted = questions;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    ErrorSet set;
    set.branch = ErrorBranch::Vqa;
    for (const auto& q : sorted) {
        json qj = {{"id", q.id}, {"target", q.target}, {"aspect", aspect_name(q.aspect)},
                   {"text", q.question_text}};
        ChatRequest req = make_request(templates_.expand("vqa_detect", {{"question", q.question_text}}),
                                       json{{"task", "vqa_answer"}, {"question", qj}}, &image,
                                       ResponseHint::FreeText);
        ChatResponse resp = chat_.chat(req);
        std::string explanation = resp.text;
        std::string label_text = resp.text;
        json j = json::parse(resp.text, nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            if (j.contains("label")) label_text = j["label"].get<std::string>();
            if (j.contains("explanation")) explanation = j["explanation"].get<std::string>();
        }
        if (!parse_yes_no(label_text)) {
            ErrorRecord rec;
            rec.category = q.aspect;
            rec.explanation = explanation;
            set.add_deduped(std::move(rec));
        }
    }
    return set;
}

ErrorSet ErrorAnalyzer::caption_and_compare(const ImageRef& image, const std::string& prompt) const {
    if (normalize_ws(prompt).empty()) throw PreconditionError("caption_and_compare: empty prompt");

    ChatRequest cap_req =
        make_request(templates_.expand("caption", {}), json{{"task", "caption"}}, &image);
    json cap = parse_strict_json(chat_.chat(cap_req).text);
    std::string caption = cap.at("caption");

    ChatRequest cmp_req = make_request(
        templates_.expand("caption_compare", {{"prompt", prompt}, {"caption", caption}}),
        json{{"task", "caption_compare"}, {"prompt", prompt}, {"caption", caption}});
    json j = parse_strict_json(chat_.chat(cmp_req).text);

    ErrorSet set;
    set.branch = ErrorBranch::Caption;
    for (const auto& e : j.at("errors")) {
        ErrorRecord rec;
        auto a = aspect_from_name(e.at("category").get<std::string>());
        if (!a) throw MalformedReply("caption_compare: unknown category");
        rec.category = *a;
        rec.explanation = e.at("explanation");
        set.add_deduped(std::move(rec));
    }
    return set;
}

ErrorSet ErrorAnalyzer::integrate_errors(const ImageRef& image, const std::string& prompt,
                                         const ErrorSet& vqa, const ErrorSet& caption) const {
    ChatRequest req = make_request(
        templates_.expand("integrate", {{"prompt", prompt},
                                        {"vqa_errors", errors_to_json(vqa).dump()},
                                        {"caption_errors", errors_to_json(caption).dump()}}),
        json{{"task", "integrate"},
             {"prompt", prompt},
             {"vqa_errors", errors_to_json(vqa)},
             {"caption_errors", errors_to_json(caption)}},
        &image);
    json j = parse_strict_json(chat_.chat(req).text);

    ErrorSet out;
    out.branch = ErrorBranch::Integrated;
    for (const auto& e : j.at("errors")) {
        ErrorRecord rec;
        auto a = aspect_from_name(e.at("category").get<std::string>());
        if (!a) throw MalformedReply("integrate: unknown category");
        rec.category = *a;
        rec.explanation = e.at("explanation");
        int sev = 2;
        if (e.contains("severity") && e["severity"].is_number_integer()) sev = e["severity"];
        rec.severity = std::clamp(sev, 1, 3);
        out.add_deduped(std::move(rec));
    }
    if (j.contains("rejected") && on_rejection)
        for (const auto& r : j["rejected"])
            on_rejection(r.value("explanation", "") + " -- " + r.value("reason", "unspecified"));
    return out;
}

std::vector<ErrorMapping> ErrorAnalyzer::map_errors(const ErrorSet& errors,
                                                    const std::vector<MetaSentence>& pieces) const {
    if (errors.empty()) throw PreconditionError("map_errors: errors must be non-empty");

    auto parse_reply = [&](const ChatResponse& resp) {
        json j = parse_strict_json(resp.text);
        std::vector<ErrorMapping> maps;
        for (const auto& m : j.at("mappings")) {
            ErrorMapping em;
            em.error_index = m.at("error_index");
            em.sentence_index = m.at("sentence_index");
            em.rationale = m.value("rationale", "");
            if (em.sentence_index < 0 || em.sentence_index >= static_cast<int>(pieces.size()))
                throw UnmappableError("map_errors: sentence " + std::to_string(em.sentence_index) +
                                      " does not exist");
            if (em.error_index < 0 || em.error_index >= static_cast<int>(errors.records.size()))
                throw MalformedReply("map_errors: error index out of range");
            maps.push_back(std::move(em));
        }
        if (maps.size() != errors.records.size())
            throw MalformedReply("map_errors: need exactly one mapping per error");
        return maps;
    };

    ChatRequest req = make_request(
        templates_.expand("map_errors", {{"errors", errors_to_json(errors).dump()},
                                         {"pieces", pieces_to_json(pieces).dump()}}),
        json{{"task", "map_errors"}, {"errors", errors_to_json(errors)}, {"pieces", pieces_to_json(pieces)}});
    try {
        return parse_reply(chat_.chat(req));
    } catch (const UnmappableError&) {
        req.user_parts.push_back(ChatPart::text_part(
            "One of your sentence indices does not exist. Map every error to a valid piece index."));
        return parse_reply(chat_.chat(req));  // UnmappableError propagates on second failure
    }
}

RunMetadata ErrorAnalyzer::analyze(const std::string& prompt, const ImageRef& image) const {
    RunMetadata meta;
    meta.original_prompt = prompt;
    meta.original_image = image;
    meta.pieces = decompose_prompt(prompt);
    meta.questions = generate_questions(meta.pieces);
    ErrorSet vqa = answer_questions(image, meta.questions);
    ErrorSet caption = caption_and_compare(image, prompt);
    meta.error_set = integrate_errors(image, prompt, vqa, caption);
    if (!meta.error_set.empty()) {
        meta.mappings = map_errors(meta.error_set, meta.pieces);
        for (auto& m : meta.mappings)
            meta.error_set.records[m.error_index].mapped_sentence = m.sentence_index;
    }
    return meta;
}

}  // namespace t2i
