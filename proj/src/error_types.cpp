#include "t2iopt/error_types.hpp"

#include <array>

namespace t2i {

namespace {
constexpr std::array<const char*, 10> kAspectNames = {
    "Existence", "Color", "Number", "Shape", "State",
    "Texture",   "Relation", "Position", "Background", "Style"};
}

std::string aspect_name(Aspect a) { return kAspectNames[static_cast<int>(a)]; }

std::optional<Aspect> aspect_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kAspectNames.size(); ++i)
        if (name == kAspectNames[i]) return static_cast<Aspect>(i);
    return std::nullopt;
}

std::string piece_kind_name(PieceKind k) {
    switch (k) {
        case PieceKind::Object: return "Object";
        case PieceKind::Relationship: return "Relationship";
        case PieceKind::Background: return "Background";
    }
    return "Object";
}

std::optional<PieceKind> piece_kind_from_name(std::string_view name) {
    if (name == "Object") return PieceKind::Object;
    if (name == "Relationship") return PieceKind::Relationship;
    if (name == "Background") return PieceKind::Background;
    return std::nullopt;
}

std::string branch_name(ErrorBranch b) {
    switch (b) {
        case ErrorBranch::Vqa: return "Vqa";
        case ErrorBranch::Caption: return "Caption";
        case ErrorBranch::Integrated: return "Integrated";
    }
    return "Vqa";
}

bool ErrorSet::add_deduped(ErrorRecord rec) {
    rec.branch = branch;
    for (const auto& r : records)
        if (r.dedup_key() == rec.dedup_key()) return false;
    records.push_back(std::move(rec));
    return true;
}

}  // namespace t2i
