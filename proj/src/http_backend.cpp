#include "t2iopt/http_backend.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace t2i {

using nlohmann::json;

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        unsigned int v = static_cast<unsigned char>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 2]);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? kB64Alphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? kB64Alphabet[v & 63] : '=');
    }
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string out;
    int buffer = 0, bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = b64_value(c);
        if (v < 0) throw MalformedReply("base64: invalid character");
        buffer = (buffer << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((buffer >> bits) & 0xff));
        }
    }
    return out;
}

// One retrying, concurrency-bounded JSON POST channel.
class HttpTransport {
public:
    HttpTransport(BackendConfig config, CallSink sink)
        : config_(std::move(config)), sink_(std::move(sink)) {
        config_.validate();
        auto pos = config_.base_url.find("://");
        std::size_t host_start = pos == std::string::npos ? 0 : pos + 3;
        auto path_pos = config_.base_url.find('/', host_start);
        if (path_pos == std::string::npos) {
            origin_ = config_.base_url;
        } else {
            origin_ = config_.base_url.substr(0, path_pos);
            path_prefix_ = config_.base_url.substr(path_pos);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
        slots_ = config_.max_concurrency;
    }

    json post_json(const std::string& path, const json& body, const json& sink_body) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return slots_ > 0; });
        --slots_;
        lock.unlock();
        try {
            json reply = post_locked(path, body, sink_body);
            release();
            return reply;
        } catch (...) {
            release();
            throw;
        }
    }

    const BackendConfig& config() const { return config_; }

private:
    void release() {
        std::lock_guard lock(mu_);
        ++slots_;
        cv_.notify_one();
    }

    json post_locked(const std::string& path, const json& body, const json& sink_body) {
        httplib::Client client(origin_);
        client.set_connection_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);

        httplib::Headers headers;
        if (!config_.api_key_env.empty()) {
            const char* key = std::getenv(config_.api_key_env.c_str());
            if (!key || !*key)
                throw AuthError("http: environment variable " + config_.api_key_env + " is not set");
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        std::string payload = body.dump();
        std::string url = path_prefix_ + path;
        int backoff = config_.retry.initial_backoff_ms;
        std::string last_error;
        for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff = static_cast<int>(backoff * config_.retry.multiplier);
            }
            auto res = client.Post(url, headers, payload, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;  // transport-level failure, retryable
            }
            mirror(url, sink_body, res->status, res->body);
            if (res->status == 401 || res->status == 403)
                throw AuthError("http: status " + std::to_string(res->status) + " from " + url);
            if (res->status == 400 &&
                to_lower(res->body).find("content") != std::string::npos)
                throw ContentRejected("http: endpoint refused the request: " + res->body);
            if (res->status >= 200 && res->status < 300) {
                try {
                    return json::parse(res->body);
                } catch (const json::exception& e) {
                    throw MalformedReply(std::string("http: unparseable response body: ") + e.what());
                }
            }
            last_error = "status " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
            if (res->status != 408 && res->status != 429 && res->status < 500)
                throw TransportError("http: non-retryable " + last_error);
        }
        throw TransportError("http: " + std::to_string(config_.retry.max_attempts) +
                             " attempts to " + url + " failed; last: " + last_error);
    }

    void mirror(const std::string& url, const json& sink_body, int status,
                const std::string& body) {
        if (!sink_) return;
        json record = {{"endpoint", url}, {"request", sink_body}, {"status", status}};
        try {
            record["response"] = json::parse(body);
        } catch (const json::exception&) {
            record["response"] = body.substr(0, 500);
        }
        sink_(record);
    }

    BackendConfig config_;
    CallSink sink_;
    std::string origin_;
    std::string path_prefix_;
    std::mutex mu_;
    std::condition_variable cv_;
    int slots_ = 1;
};

namespace {

// Copy of the request body with image data URIs elided, for the call sink.
json elide_images(json body) {
    for (auto& msg : body["messages"])
        if (msg["content"].is_array())
            for (auto& part : msg["content"])
                if (part.value("type", "") == "image_url") {
                    std::string url = part["image_url"]["url"].get<std::string>();
                    part["image_url"]["url"] = "data-uri(" + std::to_string(url.size()) + " chars)";
                }
    return body;
}

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig config, ArtifactStore& store, CallSink sink)
    : config_(std::move(config)), store_(store),
      transport_(std::make_shared<HttpTransport>(config_, std::move(sink))) {}

HttpChatBackend::~HttpChatBackend() = default;

std::string HttpChatBackend::id() const { return "http:" + config_.model_name; }

int HttpChatBackend::max_attempts() const { return config_.retry.max_attempts; }

ChatResponse HttpChatBackend::chat_once(const ChatRequest& request) {
    json content = json::array();
    for (const auto& part : request.user_parts) {
        if (part.kind == ChatPart::Kind::Text) {
            content.push_back({{"type", "text"}, {"text", part.text}});
        } else {
            std::string bytes = store_.resolve(part.image);
            std::string uri = "data:" + part.image.media_type + ";base64," + base64_encode(bytes);
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", uri}}}});
        }
    }
    json body = {{"model", config_.model_name},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens},
                 {"messages", json::array({json{{"role", "system"}, {"content", request.system_text}},
                                           json{{"role", "user"}, {"content", content}}})}};
    if (request.response_hint == ResponseHint::StrictJson)
        body["response_format"] = {{"type", "json_object"}};

    json reply = transport_->post_json("/chat/completions", body, elide_images(body));
    if (!reply.contains("choices") || reply["choices"].empty())
        throw MalformedReply("chat: response has no choices");
    ChatResponse out;
    out.text = reply["choices"][0].value("message", json::object()).value("content", "");
    out.prompt_tokens = reply.value("usage", json::object()).value("prompt_tokens", 0);
    out.completion_tokens = reply.value("usage", json::object()).value("completion_tokens", 0);
    out.backend_id = id();
    return out;
}

HttpImageBackend::HttpImageBackend(BackendConfig config, ArtifactStore& store, CallSink sink)
    : config_(std::move(config)), store_(store),
      transport_(std::make_shared<HttpTransport>(config_, std::move(sink))) {}

HttpImageBackend::~HttpImageBackend() = default;

ImageRef HttpImageBackend::generate_image(const std::string& prompt, long seed) {
    if (normalize_ws(prompt).empty()) throw PreconditionError("generate_image: empty prompt");
    json body = {{"model", config_.model_name},
                 {config_.t2i_prompt_field, prompt},
                 {"seed", seed},
                 {"response_format", "b64_json"}};
    json reply = transport_->post_json(config_.t2i_path, body, body);
    const json* field = nullptr;
    try {
        field = &reply.at(json::json_pointer(config_.t2i_b64_field));
    } catch (const json::exception&) {
        throw MalformedReply("t2i: response lacks field " + config_.t2i_b64_field);
    }
    if (!field->is_string()) throw MalformedReply("t2i: image field is not a base64 string");
    std::string bytes = base64_decode(field->get<std::string>());
    if (bytes.empty()) throw MalformedReply("t2i: empty image payload");
    return store_.put(bytes, "image/png", Provenance::Http, sha256_hex(prompt).substr(0, 16));
}

HttpEmbedBackend::HttpEmbedBackend(BackendConfig config, CallSink sink)
    : config_(std::move(config)),
      transport_(std::make_shared<HttpTransport>(config_, std::move(sink))) {}

HttpEmbedBackend::~HttpEmbedBackend() = default;

std::vector<std::vector<double>> HttpEmbedBackend::embed(const std::vector<std::string>& texts) {
    json body = {{"model", config_.model_name}, {"input", texts}};
    json reply = transport_->post_json("/embeddings", body, body);
    if (!reply.contains("data") || !reply["data"].is_array() || reply["data"].size() != texts.size())
        throw DimMismatch("embeddings: response cardinality mismatch");
    // The API may return rows out of order; honor the index field.
    std::vector<std::vector<double>> out(texts.size());
    for (const auto& row : reply["data"]) {
        std::size_t index = row.value("index", out.size());
        if (index >= out.size()) throw DimMismatch("embeddings: bad row index");
        out[index] = row.value("embedding", std::vector<double>{});
    }
    return out;
}

}  // namespace t2i
