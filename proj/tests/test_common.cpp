#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "t2iopt/common.hpp"

using namespace t2i;

TEST_CASE("normalize_ws collapses runs and trims") {
    CHECK(normalize_ws("  a   b\t\nc  ") == "a b c");
    CHECK(normalize_ws("") == "");
    CHECK(normalize_ws("   ") == "");
    CHECK(normalize_ws("one two") == "one two");
}

TEST_CASE("normalize_alnum keeps lowercase alphanumerics only") {
    CHECK(normalize_alnum("Hello, World! 42") == "helloworld42");
    CHECK(normalize_alnum("...") == "");
    CHECK(normalize_alnum("A-B_c") == "abc");
}

TEST_CASE("case mapping") {
    CHECK(to_lower("MiXeD 42!") == "mixed 42!");
    CHECK(to_upper("yes") == "YES");
}

TEST_CASE("tokenize lowercases and strips punctuation") {
    auto toks = tokenize("Six baozi, in a STEAMER.");
    REQUIRE(toks.size() == 5);
    CHECK(toks[0] == "six");
    CHECK(toks[1] == "baozi");
    CHECK(toks[4] == "steamer");
    CHECK(tokenize("").empty());
}

TEST_CASE("contains_word matches whole words only") {
    CHECK(contains_word("six baozi in a steamer", "baozi"));
    CHECK_FALSE(contains_word("steamers everywhere", "steamer"));
    CHECK(contains_word("a cat.", "cat"));
    CHECK_FALSE(contains_word("concatenate", "cat"));
}

TEST_CASE("fnv1a64 is deterministic and input sensitive") {
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("abd"));
    CHECK(fnv1a64("abc") != fnv1a64("abc", 12345));
    // FNV-1a of the empty string is the offset basis itself.
    CHECK(fnv1a64("") == 1469598103934665603ULL);
}

TEST_CASE("mix_hash depends on part order and seed") {
    CHECK(mix_hash({"a", "b"}, 0) == mix_hash({"a", "b"}, 0));
    CHECK(mix_hash({"a", "b"}, 0) != mix_hash({"b", "a"}, 0));
    CHECK(mix_hash({"a", "b"}, 0) != mix_hash({"a", "b"}, 1));
}

TEST_CASE("hash_fraction maps into [0,1)") {
    for (std::uint64_t h : {0ULL, 1ULL, 123456789ULL, ~0ULL}) {
        double f = hash_fraction(h);
        CHECK(f >= 0.0);
        CHECK(f < 1.0);
    }
    CHECK(hash_fraction(0) == doctest::Approx(0.0));
}

TEST_CASE("sha256_hex matches published digests") {
    // Independent oracle: FIPS 180-4 test vectors.
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
