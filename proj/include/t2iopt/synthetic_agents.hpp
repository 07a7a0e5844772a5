#pragma once

#include <string>
#include <vector>

#include "t2iopt/backends.hpp"
#include "t2iopt/synthetic_env.hpp"

namespace t2i::synth {

// Deterministic in-process stand-in for the multimodal chat model. Callers
// attach a machine-readable JSON payload as the last user text part (the
// expanded instruction template travels in system_text for real endpoints);
// this backend dispatches on the payload's "task" field and computes the
// reply exactly from the payload plus any attached synthetic image.
//
// Pure: identical requests yield identical replies.
class SyntheticAgentBackend final : public ChatBackend {
public:
    explicit SyntheticAgentBackend(ArtifactStore& store) : store_(store) {}

    std::string id() const override { return "synthetic-agents"; }

protected:
    ChatResponse chat_once(const ChatRequest& request) override;

private:
    ArtifactStore& store_;
};

// Candidate-sentence rewriting recipes, exposed for tests. Variant j is a
// deterministic function of (sentence, error category, explanation, j).
std::string rewrite_variant(const std::string& sentence, Aspect category,
                            const std::string& explanation, int variant);

}  // namespace t2i::synth
