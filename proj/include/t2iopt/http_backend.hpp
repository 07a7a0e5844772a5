#pragma once

#include <memory>
#include <string>
#include <vector>

#include "t2iopt/artifact_store.hpp"
#include "t2iopt/backends.hpp"

namespace t2i {

// Shared transport: one httplib client per backend, bearer auth resolved from
// the environment at call time, bounded in-flight requests, geometric-backoff
// retries. Request/response pairs are mirrored to the sink with secrets and
// image payloads elided.
class HttpTransport;

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws MalformedReply on bad input

class HttpChatBackend final : public ChatBackend {
public:
    HttpChatBackend(BackendConfig config, ArtifactStore& store, CallSink sink = nullptr);
    ~HttpChatBackend() override;

    std::string id() const override;

protected:
    ChatResponse chat_once(const ChatRequest& request) override;
    int max_attempts() const override;

private:
    BackendConfig config_;
    ArtifactStore& store_;
    std::shared_ptr<HttpTransport> transport_;
};

class HttpImageBackend final : public ImageBackend {
public:
    HttpImageBackend(BackendConfig config, ArtifactStore& store, CallSink sink = nullptr);
    ~HttpImageBackend() override;

    ImageRef generate_image(const std::string& prompt, long seed) override;

private:
    BackendConfig config_;
    ArtifactStore& store_;
    std::shared_ptr<HttpTransport> transport_;
};

class HttpEmbedBackend final : public EmbedBackend {
public:
    explicit HttpEmbedBackend(BackendConfig config, CallSink sink = nullptr);
    ~HttpEmbedBackend() override;

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

private:
    BackendConfig config_;
    std::shared_ptr<HttpTransport> transport_;
};

}  // namespace t2i
