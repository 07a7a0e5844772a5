#pragma once

#include <functional>
#include <string>
#include <vector>

#include "t2iopt/backends.hpp"
#include "t2iopt/error_types.hpp"
#include "t2iopt/templates.hpp"

namespace t2i {

// Stage 1: decompose -> question -> (VQA branch || caption branch) ->
// integrate -> map. Every agent instruction comes from the template assets.
class ErrorAnalyzer {
public:
    ErrorAnalyzer(ChatBackend& chat, const TemplateSet& templates)
        : chat_(chat), templates_(templates) {}

    // Rejections the integration verifier logs instead of silently dropping.
    std::function<void(const std::string&)> on_rejection;

    std::vector<MetaSentence> decompose_prompt(const std::string& prompt) const;
    std::vector<QuestionItem> generate_questions(const std::vector<MetaSentence>& pieces) const;
    ErrorSet answer_questions(const ImageRef& image, const std::vector<QuestionItem>& questions) const;
    ErrorSet caption_and_compare(const ImageRef& image, const std::string& prompt) const;
    ErrorSet integrate_errors(const ImageRef& image, const std::string& prompt, const ErrorSet& vqa,
                              const ErrorSet& caption) const;
    std::vector<ErrorMapping> map_errors(const ErrorSet& errors,
                                         const std::vector<MetaSentence>& pieces) const;

    // Runs the whole stage against one (prompt, image) pair.
    RunMetadata analyze(const std::string& prompt, const ImageRef& image) const;

    // Decomposition chunks prompts longer than this at sentence boundaries.
    static constexpr std::size_t kChunkChars = 4000;

private:
    ChatBackend& chat_;
    const TemplateSet& templates_;
};

// Normalizes a reply and extracts the first standalone YES/NO token.
// Throws UnparseableLabel when neither appears.
bool parse_yes_no(const std::string& reply_text);

// Content words: tokens that are not articles/conjunctions. The decomposition
// coverage invariant is checked over these.
std::vector<std::string> content_words(const std::string& text);

}  // namespace t2i
