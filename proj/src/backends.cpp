#include "t2iopt/backends.hpp"

#include <json.hpp>

#include <cmath>

namespace t2i {

void BackendConfig::validate() const {
    if (retry.max_attempts < 1) throw PreconditionError("retry.max_attempts must be >= 1");
    if (retry.multiplier < 1.0) throw PreconditionError("retry.multiplier must be >= 1");
    if (timeout_ms <= 0) throw PreconditionError("timeout_ms must be > 0");
    if (max_concurrency < 1) throw PreconditionError("max_concurrency must be >= 1");
}

nlohmann::json parse_strict_json(const std::string& text) {
    std::string body = normalize_ws(text);
    // chat models commonly wrap JSON in ```...``` fences
    if (body.rfind("```", 0) == 0) {
        auto open_end = body.find_first_of(" \n{[", 3);
        auto close = body.rfind("```");
        if (close != std::string::npos && close > 3)
            body = body.substr(3, close - 3);
        else
            body = body.substr(3);
        // drop a language tag like "json"
        auto brace = body.find_first_of("{[");
        if (brace != std::string::npos) body = body.substr(brace);
        (void)open_end;
    }
    auto first = body.find_first_of("{[");
    auto last = body.find_last_of("}]");
    if (first == std::string::npos || last == std::string::npos || last < first)
        throw MalformedReply("reply contains no JSON object: " + text.substr(0, 120));
    auto parsed = nlohmann::json::parse(body.substr(first, last - first + 1), nullptr, false);
    if (parsed.is_discarded())
        throw MalformedReply("reply is not valid JSON: " + text.substr(0, 120));
    return parsed;
}

ChatResponse ChatBackend::chat(const ChatRequest& request) {
    if (request.user_parts.empty())
        throw PreconditionError("chat: at least one user part required");
    if (!std::isfinite(request.temperature) || request.temperature < 0.0 || request.temperature > 2.0)
        throw PreconditionError("chat: temperature out of range");

    ChatRequest attempt = request;
    int attempts = std::max(1, max_attempts());
    std::string last_error;
    for (int i = 0; i < attempts; ++i) {
        ++round_trips_;
        ChatResponse resp = chat_once(attempt);
        if (resp.text.empty()) throw MalformedReply("chat: empty reply text");
        if (request.response_hint == ResponseHint::FreeText) return resp;
        try {
            (void)parse_strict_json(resp.text);
            return resp;
        } catch (const MalformedReply& e) {
            last_error = e.what();
            attempt.user_parts.push_back(ChatPart::text_part(
                "Your previous reply was not valid JSON. Reply again with a single JSON "
                "object and nothing else."));
        }
    }
    throw MalformedReply("chat: no valid JSON after " + std::to_string(attempts) +
                         " attempts: " + last_error);
}

ChatResponse ScriptedChatBackend::chat_once(const ChatRequest& request) {
    ++calls_;
    seen_.push_back(request);
    if (replies_.empty()) {
        // echo the last user text part
        for (auto it = request.user_parts.rbegin(); it != request.user_parts.rend(); ++it)
            if (it->kind == ChatPart::Kind::Text) return {it->text, 0, 0, id()};
        throw MalformedReply("scripted echo: no text part");
    }
    std::size_t idx = std::min<std::size_t>(calls_ - 1, replies_.size() - 1);
    return {replies_[idx], 0, 0, id()};
}

std::vector<EmbeddingVector> embed_texts(EmbedBackend& backend, const std::vector<std::string>& texts) {
    if (texts.empty()) throw PreconditionError("embed: texts must be non-empty");
    for (const auto& t : texts)
        if (t.empty()) throw PreconditionError("embed: each text must be non-empty");

    auto raw = backend.embed(texts);
    if (raw.size() != texts.size()) throw DimMismatch("embed: backend returned wrong count");
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    std::size_t dim = raw.empty() ? 0 : raw.front().size();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i].size() != dim) throw DimMismatch("embed: inconsistent vector sizes");
        for (double v : raw[i])
            if (!std::isfinite(v)) throw DimMismatch("embed: non-finite component");
        out.push_back({std::move(raw[i]), dim, sha256_hex(texts[i])});
    }
    return out;
}

std::vector<std::vector<double>> MockEmbedBackend::embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<double> v(kDim, 0.0);
        for (const auto& tok : tokenize(text)) {
            std::uint64_t h = fnv1a64(tok);
            double sign = (h >> 63) ? 1.0 : -1.0;
            v[h % kDim] += sign;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (double& x : v) x /= norm;
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace t2i
