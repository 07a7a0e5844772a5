#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>

#include "t2iopt/error_analysis.hpp"
#include "t2iopt/optimizer.hpp"
#include "t2iopt/synthetic_agents.hpp"
#include "t2iopt/synthetic_env.hpp"
#include "t2iopt/templates.hpp"

using namespace t2i;
using nlohmann::json;

namespace {

TemplateSet minimal_templates() {
    TemplateSet t;
    t.set("decompose", "Split this prompt into pieces: {{prompt}}");
    t.set("generate_questions", "Write yes/no questions for: {{pieces}}");
    t.set("vqa_detect", "Answer about the image: {{question}}");
    t.set("caption", "Describe the image.");
    t.set("caption_compare", "Compare {{prompt}} with {{caption}}");
    t.set("integrate", "Merge findings for {{prompt}}: {{vqa_errors}} / {{caption_errors}}");
    t.set("map_errors", "Map {{errors}} onto {{pieces}}");
    return t;
}

ImageRef stub_image() {
    ImageRef ref;
    ref.content_hash = "deadbeef";
    ref.byte_length = 16;
    return ref;
}

std::string good_pieces_reply() {
    return json{{"pieces",
                 json::array({{{"index", 0}, {"text", "six baozi"}, {"kind", "Object"}},
                              {{"index", 1},
                               {"text", "in a bamboo steamer"},
                               {"kind", "Relationship"}}})}}
        .dump();
}

std::vector<MetaSentence> baozi_pieces() {
    return {{0, "six baozi", PieceKind::Object},
            {1, "in a bamboo steamer", PieceKind::Relationship}};
}

std::string full_question_reply() {
    return json{{"questions",
                 json::array(
                     {{{"id", 0}, {"target", 0}, {"aspect", "Existence"},
                       {"text", "Is there at least one baozi?"}},
                      {{"id", 1}, {"target", 0}, {"aspect", "Number"},
                       {"text", "Are there exactly six baozi?"}},
                      {{"id", 2}, {"target", 1}, {"aspect", "Relation"},
                       {"text", "Is the baozi in the steamer?"}}})}}
        .dump();
}

const std::filesystem::path assets_dir() {
    const char* env = std::getenv("T2IOPT_ASSETS");
    return env ? std::filesystem::path(env) : std::filesystem::path("assets");
}

}  // namespace

TEST_CASE("yes/no labels parse leniently but never silently") {
    CHECK(parse_yes_no("YES"));
    CHECK(parse_yes_no("yes, the baozi are all present."));
    CHECK_FALSE(parse_yes_no("No."));
    CHECK_FALSE(parse_yes_no("The answer is NO overall"));
    CHECK_THROWS_AS(parse_yes_no("maybe"), UnparseableLabel);
}

TEST_CASE("content words exclude articles and conjunctions") {
    auto words = content_words("the six baozi and a steamer with lids");
    CHECK(words == std::vector<std::string>{"six", "baozi", "steamer", "lids"});
}

TEST_CASE("decomposition keeps every content word of the prompt") {
    auto templates = minimal_templates();

    SUBCASE("clean split accepted on the first attempt") {
        ScriptedChatBackend chat({good_pieces_reply()});
        ErrorAnalyzer analyzer(chat, templates);
        auto pieces = analyzer.decompose_prompt("six baozi in a bamboo steamer");
        REQUIRE(pieces.size() == 2);
        CHECK(pieces[0].kind == PieceKind::Object);
        CHECK(pieces[1].kind == PieceKind::Relationship);
        CHECK(chat.calls_made() == 1);
    }

    SUBCASE("dropped word triggers one repair round naming the word") {
        std::string lossy =
            json{{"pieces", json::array({{{"index", 0}, {"text", "six baozi"}, {"kind", "Object"}},
                                         {{"index", 1},
                                          {"text", "in a steamer"},
                                          {"kind", "Relationship"}}})}}
                .dump();
        ScriptedChatBackend chat({lossy, good_pieces_reply()});
        ErrorAnalyzer analyzer(chat, templates);
        auto pieces = analyzer.decompose_prompt("six baozi in a bamboo steamer");
        CHECK(pieces.size() == 2);
        CHECK(chat.calls_made() == 2);
        const auto& retry = chat.requests().back();
        CHECK(retry.user_parts.back().text.find("bamboo") != std::string::npos);
    }

    SUBCASE("coverage still broken after repair fails loudly") {
        std::string lossy =
            json{{"pieces", json::array({{{"index", 0}, {"text", "six baozi"}, {"kind", "Object"}}})}}
                .dump();
        ScriptedChatBackend chat({lossy, lossy});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK_THROWS_AS(analyzer.decompose_prompt("six baozi in a bamboo steamer"),
                        CoverageFailure);
    }

    SUBCASE("malformed replies are rejected") {
        std::string gap =
            json{{"pieces", json::array({{{"index", 0}, {"text", "six baozi in a bamboo steamer"},
                                          {"kind", "Object"}},
                                         {{"index", 2}, {"text", "x"}, {"kind", "Object"}}})}}
                .dump();
        ScriptedChatBackend chat({gap});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK_THROWS_AS(analyzer.decompose_prompt("six baozi in a bamboo steamer"), MalformedReply);

        ScriptedChatBackend empty_chat({json{{"pieces", json::array()}}.dump()});
        ErrorAnalyzer a2(empty_chat, templates);
        CHECK_THROWS_AS(a2.decompose_prompt("six baozi"), MalformedReply);

        ErrorAnalyzer a3(chat, templates);
        CHECK_THROWS_AS(a3.decompose_prompt("   "), PreconditionError);
    }
}

TEST_CASE("question generation enforces full piece coverage") {
    auto templates = minimal_templates();

    SUBCASE("every piece targeted and objects get existence checks") {
        ScriptedChatBackend chat({full_question_reply()});
        ErrorAnalyzer analyzer(chat, templates);
        auto qs = analyzer.generate_questions(baozi_pieces());
        REQUIRE(qs.size() == 3);
        CHECK(qs[0].aspect == Aspect::Existence);
        CHECK(qs[2].target == 1);
        CHECK(chat.calls_made() == 1);
    }

    SUBCASE("object piece without an existence question is repaired once") {
        std::string no_existence =
            json{{"questions",
                  json::array({{{"id", 0}, {"target", 0}, {"aspect", "Number"},
                                {"text", "Are there exactly six baozi?"}},
                               {{"id", 1}, {"target", 1}, {"aspect", "Relation"},
                                {"text", "Is the baozi in the steamer?"}}})}}
                .dump();
        ScriptedChatBackend chat({no_existence, full_question_reply()});
        ErrorAnalyzer analyzer(chat, templates);
        auto qs = analyzer.generate_questions(baozi_pieces());
        CHECK(qs.size() == 3);
        CHECK(chat.calls_made() == 2);

        ScriptedChatBackend stubborn({no_existence, no_existence});
        ErrorAnalyzer a2(stubborn, templates);
        CHECK_THROWS_AS(a2.generate_questions(baozi_pieces()), IncompleteCoverage);
    }

    SUBCASE("invalid targets and aspects are malformed") {
        std::string bad_target =
            json{{"questions", json::array({{{"id", 0}, {"target", 5}, {"aspect", "Existence"},
                                             {"text", "?"}}})}}
                .dump();
        ScriptedChatBackend chat({bad_target});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK_THROWS_AS(analyzer.generate_questions(baozi_pieces()), MalformedReply);

        std::string bad_aspect =
            json{{"questions", json::array({{{"id", 0}, {"target", 0}, {"aspect", "Vibes"},
                                             {"text", "?"}}})}}
                .dump();
        ScriptedChatBackend chat2({bad_aspect});
        ErrorAnalyzer a2(chat2, templates);
        CHECK_THROWS_AS(a2.generate_questions(baozi_pieces()), MalformedReply);

        CHECK_THROWS_AS(a2.generate_questions({}), PreconditionError);
    }
}

TEST_CASE("VQA answers collect only NO verdicts, in question-id order") {
    auto templates = minimal_templates();
    std::vector<QuestionItem> unordered = {
        {1, 0, Aspect::Number, "Are there exactly six baozi?"},
        {0, 0, Aspect::Existence, "Is there at least one baozi?"}};

    SUBCASE("NO verdict becomes an error record with the question aspect") {
        // Replies are consumed in sorted-id order: id 0 first.
        ScriptedChatBackend chat(
            {json{{"label", "YES"}, {"explanation", "baozi present"}}.dump(),
             json{{"label", "NO"}, {"explanation", "only one baozi, expected six"}}.dump()});
        ErrorAnalyzer analyzer(chat, templates);
        ErrorSet set = analyzer.answer_questions(stub_image(), unordered);
        REQUIRE(set.records.size() == 1);
        CHECK(set.records[0].category == Aspect::Number);
        CHECK(set.records[0].explanation == "only one baozi, expected six");
        CHECK(set.branch == ErrorBranch::Vqa);
    }

    SUBCASE("all YES yields an empty set") {
        ScriptedChatBackend chat({"YES"});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK(analyzer.answer_questions(stub_image(), unordered).empty());
    }

    SUBCASE("raw-text NO replies keep the full text as explanation") {
        ScriptedChatBackend chat({"NO, the steamer is missing entirely"});
        ErrorAnalyzer analyzer(chat, templates);
        ErrorSet set = analyzer.answer_questions(
            stub_image(), {{0, 0, Aspect::Existence, "Is there a steamer?"}});
        REQUIRE(set.records.size() == 1);
        CHECK(set.records[0].explanation == "NO, the steamer is missing entirely");
    }

    SUBCASE("empty question list is a precondition error") {
        ScriptedChatBackend chat({"YES"});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK_THROWS_AS(analyzer.answer_questions(stub_image(), {}), PreconditionError);
    }
}

TEST_CASE("caption branch reports discrepancies between caption and prompt") {
    auto templates = minimal_templates();

    SUBCASE("discrepancy becomes a caption-branch record") {
        ScriptedChatBackend chat(
            {json{{"caption", "one baozi in a bamboo steamer"}}.dump(),
             json{{"errors", json::array({{{"category", "Number"},
                                           {"explanation",
                                            "caption describes one baozi, prompt asks for six"}}})}}
                 .dump()});
        ErrorAnalyzer analyzer(chat, templates);
        ErrorSet set = analyzer.caption_and_compare(stub_image(), "six baozi in a bamboo steamer");
        REQUIRE(set.records.size() == 1);
        CHECK(set.branch == ErrorBranch::Caption);
        CHECK(set.records[0].category == Aspect::Number);
    }

    SUBCASE("agreement yields an empty set") {
        ScriptedChatBackend chat({json{{"caption", "six baozi in a bamboo steamer"}}.dump(),
                                  json{{"errors", json::array()}}.dump()});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK(analyzer.caption_and_compare(stub_image(), "six baozi in a bamboo steamer").empty());
        CHECK_THROWS_AS(analyzer.caption_and_compare(stub_image(), " "), PreconditionError);
    }
}

TEST_CASE("integration dedupes across branches and logs rejections") {
    auto templates = minimal_templates();
    ErrorSet vqa;
    vqa.branch = ErrorBranch::Vqa;
    vqa.add_deduped({Aspect::Number, "only one baozi, expected six", ErrorBranch::Vqa, {}, 2});
    ErrorSet caption;
    caption.branch = ErrorBranch::Caption;
    caption.add_deduped(
        {Aspect::Texture, "boards lack the frosty texture", ErrorBranch::Caption, {}, 2});

    SUBCASE("disjoint findings form a union, severities clamp to 1..3") {
        ScriptedChatBackend chat(
            {json{{"errors",
                   json::array({{{"category", "Number"},
                                 {"explanation", "only one baozi, expected six"},
                                 {"severity", 9}},
                                {{"category", "Texture"},
                                 {"explanation", "boards lack the frosty texture"},
                                 {"severity", 0}}})}}
                 .dump()});
        ErrorAnalyzer analyzer(chat, templates);
        ErrorSet out = analyzer.integrate_errors(stub_image(), "prompt", vqa, caption);
        REQUIRE(out.records.size() == 2);
        CHECK(out.branch == ErrorBranch::Integrated);
        CHECK(out.records[0].severity == 3);
        CHECK(out.records[1].severity == 1);
    }

    SUBCASE("same finding phrased twice collapses to one record") {
        ScriptedChatBackend chat(
            {json{{"errors",
                   json::array({{{"category", "Number"},
                                 {"explanation", "only one baozi, expected six"}},
                                {{"category", "Number"},
                                 {"explanation", "Only one baozi -- expected six!"}}})}}
                 .dump()});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK(analyzer.integrate_errors(stub_image(), "prompt", vqa, caption).records.size() == 1);
    }

    SUBCASE("empty evidence stays empty and rejections reach the callback") {
        ScriptedChatBackend chat(
            {json{{"errors", json::array()},
                  {"rejected", json::array({{{"explanation", "color looks off"},
                                             {"reason", "not asserted by the prompt"}}})}}
                 .dump()});
        ErrorAnalyzer analyzer(chat, templates);
        std::vector<std::string> rejected;
        analyzer.on_rejection = [&](const std::string& note) { rejected.push_back(note); };
        CHECK(analyzer.integrate_errors(stub_image(), "prompt", ErrorSet{}, ErrorSet{}).empty());
        REQUIRE(rejected.size() == 1);
        CHECK(rejected[0].find("color looks off") != std::string::npos);
        CHECK(rejected[0].find("not asserted") != std::string::npos);
    }
}

TEST_CASE("error mapping validates indices and repairs once") {
    auto templates = minimal_templates();
    ErrorSet errors;
    errors.branch = ErrorBranch::Integrated;
    errors.add_deduped({Aspect::Number, "only one baozi, expected six", ErrorBranch::Integrated, {}, 2});
    auto pieces = baozi_pieces();

    std::string good =
        json{{"mappings", json::array({{{"error_index", 0}, {"sentence_index", 0},
                                        {"rationale", "count lives in the object piece"}}})}}
            .dump();
    std::string bad_sentence =
        json{{"mappings", json::array({{{"error_index", 0}, {"sentence_index", 9}}})}}.dump();

    SUBCASE("valid mapping accepted") {
        ScriptedChatBackend chat({good});
        ErrorAnalyzer analyzer(chat, templates);
        auto maps = analyzer.map_errors(errors, pieces);
        REQUIRE(maps.size() == 1);
        CHECK(maps[0].sentence_index == 0);
    }

    SUBCASE("nonexistent sentence index repaired once, then fatal") {
        ScriptedChatBackend chat({bad_sentence, good});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK(analyzer.map_errors(errors, pieces).size() == 1);
        CHECK(chat.calls_made() == 2);

        ScriptedChatBackend stubborn({bad_sentence, bad_sentence});
        ErrorAnalyzer a2(stubborn, templates);
        CHECK_THROWS_AS(a2.map_errors(errors, pieces), UnmappableError);
    }

    SUBCASE("mapping count must match error count") {
        ScriptedChatBackend chat({json{{"mappings", json::array()}}.dump()});
        ErrorAnalyzer analyzer(chat, templates);
        CHECK_THROWS_AS(analyzer.map_errors(errors, pieces), MalformedReply);
        CHECK_THROWS_AS(analyzer.map_errors(ErrorSet{}, pieces), PreconditionError);
    }
}

TEST_CASE("full analysis of a synthetic scene is deterministic") {
    auto dir = std::filesystem::temp_directory_path() / "t2iopt_analysis_det";
    std::filesystem::remove_all(dir);
    ArtifactStore store(dir);
    synth::SyntheticTask task = synth::baozi_task();
    synth::SyntheticImageBackend t2i(store, task);
    ImageRef image = t2i.generate_image(task.prompt, 7);

    TemplateSet templates = TemplateSet::load_dir(assets_dir() / "templates");
    synth::SyntheticAgentBackend agents(store);
    ErrorAnalyzer analyzer(agents, templates);

    RunMetadata a = analyzer.analyze(task.prompt, image);
    RunMetadata b = analyzer.analyze(task.prompt, image);
    CHECK(metadata_to_json(a).dump() == metadata_to_json(b).dump());

    // The corrupted baozi scene must surface a count error mapped to a piece.
    REQUIRE_FALSE(a.error_set.empty());
    bool number_error = false;
    for (const auto& r : a.error_set.records)
        if (r.category == Aspect::Number && r.mapped_sentence.has_value()) number_error = true;
    CHECK(number_error);
}
