#pragma once

#include <optional>
#include <string>
#include <vector>

#include "t2iopt/artifact_store.hpp"
#include "t2iopt/common.hpp"

namespace t2i {

enum class Aspect {
    Existence,
    Color,
    Number,
    Shape,
    State,
    Texture,
    Relation,
    Position,
    Background,
    Style,
};

std::string aspect_name(Aspect a);
std::optional<Aspect> aspect_from_name(std::string_view name);

enum class PieceKind { Object, Relationship, Background };

std::string piece_kind_name(PieceKind k);
std::optional<PieceKind> piece_kind_from_name(std::string_view name);

// A coarse piece of the decomposed prompt.
struct MetaSentence {
    int index = 0;
    std::string text;
    PieceKind kind = PieceKind::Object;
};

// Yes/no coverage question about one piece.
struct QuestionItem {
    int id = 0;
    int target = 0;  // MetaSentence index
    Aspect aspect = Aspect::Existence;
    std::string question_text;
};

enum class ErrorBranch { Vqa, Caption, Integrated };

std::string branch_name(ErrorBranch b);

struct ErrorRecord {
    Aspect category = Aspect::Existence;
    std::string explanation;
    ErrorBranch branch = ErrorBranch::Vqa;
    std::optional<int> mapped_sentence;
    int severity = 2;  // 1..3

    // Dedup key per the ErrorSet invariant.
    std::string dedup_key() const { return aspect_name(category) + ":" + normalize_alnum(explanation); }
};

struct ErrorSet {
    std::vector<ErrorRecord> records;
    ErrorBranch branch = ErrorBranch::Vqa;

    bool empty() const { return records.empty(); }
    // Inserts unless a record with the same (category, normalized explanation) exists.
    bool add_deduped(ErrorRecord rec);
};

struct ErrorMapping {
    int error_index = 0;     // index into the integrated ErrorSet
    int sentence_index = 0;  // MetaSentence index
    std::string rationale;
};

struct IterationSummary {
    int iteration = 0;
    std::string note;
};

// Everything Stage 1 produces; the context object the optimizer consumes.
struct RunMetadata {
    std::string original_prompt;
    ImageRef original_image;
    ErrorSet error_set;  // branch Integrated
    std::vector<ErrorMapping> mappings;
    std::vector<MetaSentence> pieces;
    std::vector<QuestionItem> questions;
    std::vector<IterationSummary> history;
};

}  // namespace t2i
