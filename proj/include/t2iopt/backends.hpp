#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2iopt/artifact_store.hpp"
#include "t2iopt/common.hpp"

namespace t2i {

enum class ResponseHint { FreeText, StrictJson };

struct ChatPart {
    enum class Kind { Text, Image };
    Kind kind = Kind::Text;
    std::string text;
    ImageRef image;

    static ChatPart text_part(std::string t) { return {Kind::Text, std::move(t), {}}; }
    static ChatPart image_part(ImageRef r) { return {Kind::Image, {}, std::move(r)}; }
};

struct ChatRequest {
    std::string system_text;
    std::vector<ChatPart> user_parts;
    double temperature = 0.0;
    int max_tokens = 2048;
    ResponseHint response_hint = ResponseHint::FreeText;
};

struct ChatResponse {
    std::string text;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    std::string backend_id;
};

struct RetryPolicy {
    int max_attempts = 3;
    int initial_backoff_ms = 200;
    double multiplier = 2.0;
};

struct BackendConfig {
    std::string base_url;
    std::string api_key_env;
    std::string model_name;
    int max_concurrency = 4;
    RetryPolicy retry;
    int timeout_ms = 60000;
    // T2I endpoint shape: OpenAI-style by default, overridable template.
    std::string t2i_path = "/images/generations";
    std::string t2i_prompt_field = "prompt";
    std::string t2i_b64_field = "/data/0/b64_json";  // JSON pointer into the response

    void validate() const;
};

// Mirrors every request/response pair (secrets excluded) into the run log.
using CallSink = std::function<void(const nlohmann::json& record)>;

class ChatBackend {
public:
    virtual ~ChatBackend() = default;

    // StrictJson enforcement and the re-ask retry loop live here; subclasses
    // implement a single round trip.
    ChatResponse chat(const ChatRequest& request);

    virtual std::string id() const = 0;

    // Completed round trips (re-ask attempts included).
    long round_trips() const { return round_trips_; }

protected:
    virtual ChatResponse chat_once(const ChatRequest& request) = 0;
    virtual int max_attempts() const { return 3; }

private:
    long round_trips_ = 0;
};

class ImageBackend {
public:
    virtual ~ImageBackend() = default;
    virtual ImageRef generate_image(const std::string& prompt, long seed) = 0;
};

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    // One vector per input, order preserving, uniform dim.
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::size_t dim = 0;
    std::string source_text_hash;
};

std::vector<EmbeddingVector> embed_texts(EmbedBackend& backend, const std::vector<std::string>& texts);

// Strips markdown code fences and returns the parsed top-level JSON object.
// Throws MalformedReply when the text is not a single JSON object/array.
nlohmann::json parse_strict_json(const std::string& text);

// A chat backend driven by a fixed reply queue. Unit-test double.
class ScriptedChatBackend final : public ChatBackend {
public:
    explicit ScriptedChatBackend(std::vector<std::string> replies, int attempts = 3)
        : replies_(std::move(replies)), attempts_(attempts) {}

    // Echo mode: replies with the last user text part of each request.
    ScriptedChatBackend() = default;

    std::string id() const override { return "scripted"; }
    int calls_made() const { return calls_; }
    const std::vector<ChatRequest>& requests() const { return seen_; }

protected:
    ChatResponse chat_once(const ChatRequest& request) override;
    int max_attempts() const override { return attempts_; }

private:
    std::vector<std::string> replies_;
    int attempts_ = 3;
    int calls_ = 0;
    std::vector<ChatRequest> seen_;
};

// Deterministic bag-of-tokens hash projection. Identical texts map to
// identical vectors; the projection is documented in the header so tests can
// recompute it independently.
//
//   dim = 32; v = 0
//   for each token t: i = fnv1a64(t) % dim; s = +1 if bit 63 of fnv1a64(t) else -1
//   v[i] += s
//   v /= max(1, ||v||_2)
class MockEmbedBackend final : public EmbedBackend {
public:
    static constexpr std::size_t kDim = 32;
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;
};

}  // namespace t2i
