#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace t2i {

// ---- error taxonomy -------------------------------------------------------

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AuthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedReply : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContentRejected : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct CoverageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IncompleteCoverage : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnparseableLabel : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnmappableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyCluster : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateEvidence : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MergeLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnparseableRating : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CountMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GrammarError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedAspect : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptLog : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyRun : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- string helpers -------------------------------------------------------

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

// Collapses runs of whitespace to single spaces and trims the ends.
std::string normalize_ws(std::string_view s);

// Lowercase, alphanumeric-only (everything else dropped). Dedup key material.
std::string normalize_alnum(std::string_view s);

// Whitespace-split after lowercasing and stripping punctuation.
std::vector<std::string> tokenize(std::string_view s);

bool contains_word(std::string_view text, std::string_view word);

// ---- hashing --------------------------------------------------------------

// FNV-1a over bytes; the seeded-decision primitive used by the mock stack.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 1469598103934665603ULL);

// Stable mix of several components into one 64-bit draw.
std::uint64_t mix_hash(std::initializer_list<std::string_view> parts, std::uint64_t seed);

// hash mapped to [0,1).
double hash_fraction(std::uint64_t h);

// SHA-256 hex digest. Content addressing for stored images.
std::string sha256_hex(std::string_view bytes);

}  // namespace t2i
