#include "support.hpp"

using namespace stindex;
using testing_support::MockServer;

namespace {

PromptContext golden_context() {
    PromptContext ctx;
    ctx.doc_id = "doc-golden";
    ctx.title = "Measles alert";
    ctx.pub_date = "2024-05-06";
    ctx.source_location = "Perth";
    ctx.chunk_ordinal = 1;
    ctx.chunk_count = 3;
    ctx.memory = {"[chunk 1] temporal: \"5 May 2024\" = 2024-05-05", "[chunk 1] spatial: \"Perth\" = Perth"};
    ctx.instructions = {"Latest absolute date so far: 2024-05-05. Resolve relative dates against it.",
                        "Document region so far: Western Australia, AU. Read ambiguous place names and "
                        "abbreviations within this region."};
    return ctx;
}

Chunk golden_chunk() {
    return testing_support::make_chunk("The next day, a second case visited Fremantle markets.", "doc-golden", 1, 38);
}

RetryPolicy quick_retry(int attempts = 3) {
    RetryPolicy r;
    r.attempts = attempts;
    r.initial_backoff = std::chrono::milliseconds(1);
    return r;
}

BackendSpec http_spec(const std::string& url) {
    BackendSpec s;
    s.kind = BackendKind::openai_compatible_http;
    s.base_url = url;
    s.model = "test-model";
    return s;
}

std::string completion_body(const std::string& content) {
    return json{{"choices", json::array({{{"message", {{"content", content}}}, {"finish_reason", "stop"}}})},
                {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}}
        .dump();
}

}  // namespace

TEST(Prompt, MatchesGoldenFile) {
    auto schema = load_schema_file(testing_support::data_dir() / "schemas" / "case_study.yaml");
    auto req = render_extraction_prompt(golden_chunk(), schema, golden_context());
    auto rendered = "[SYSTEM]\n" + req.system + "\n[USER]\n" + req.user;
    auto path = std::filesystem::path(STINDEX_TEST_DIR) / "golden" / "extraction_prompt.txt";
    if (std::getenv("STINDEX_UPDATE_GOLDEN")) text::write_file(path, rendered);
    EXPECT_EQ(rendered, text::read_file(path));
}

TEST(Prompt, SectionsComeInFixedOrder) {
    auto req = render_extraction_prompt(golden_chunk(), default_schema(), golden_context());
    std::size_t last = 0;
    for (const char* section : {"[SCHEMA]", "[STATE]", "[MEMORY]", "[CONSISTENCY]", "[CHUNK]", "[OUTPUT FORMAT]"}) {
        auto pos = req.user.find(section);
        ASSERT_NE(pos, std::string::npos) << section;
        EXPECT_GE(pos, last) << section;
        last = pos;
    }
}

TEST(Prompt, FirstChunkSaysThereIsNoMemory) {
    PromptContext ctx;
    ctx.doc_id = "d";
    auto req = render_extraction_prompt(testing_support::make_chunk("Nothing yet."), default_schema(), ctx);
    EXPECT_NE(req.user.find("[STATE]"), std::string::npos);
    EXPECT_NE(req.user.find("No prior entities in this document."), std::string::npos);
}

TEST(Prompt, SameInputsGiveSameBytes) {
    auto a = render_extraction_prompt(golden_chunk(), default_schema(), golden_context());
    auto b = render_extraction_prompt(golden_chunk(), default_schema(), golden_context());
    EXPECT_EQ(a, b);
    EXPECT_EQ(request_key(a), request_key(b));
}

TEST(Prompt, MemoryKeepsTheMostRecentThatFit) {
    std::vector<std::string> entries;
    for (int i = 0; i < 50; ++i) entries.push_back("entity-" + std::to_string(100 + i));
    auto rendered = render_memory(entries, 10 * (entries[0].size() + 1));
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(rendered.find("entity-" + std::to_string(100 + i)) != std::string::npos, i >= 40) << i;
}

TEST(Prompt, OversizedPromptShrinksMemoryThenFails) {
    auto ctx = golden_context();
    for (int i = 0; i < 200; ++i) ctx.memory.push_back("[chunk 1] temporal: \"filler\" = 2024-01-01");
    PromptLimits limits;
    limits.max_prompt_chars = 3000;
    auto req = render_extraction_prompt(golden_chunk(), default_schema(), ctx, limits);
    EXPECT_LE(text::char_length(req.system) + text::char_length(req.user), 3000u);
    limits.max_prompt_chars = 200;
    EXPECT_THROW(render_extraction_prompt(golden_chunk(), default_schema(), ctx, limits), ContextOverflow);
}

TEST(Replay, ReturnsRecordedText) {
    CompletionRequest req{"sys", "user", 0.0, 16, "replay"};
    ReplayBackend backend({{request_key(req), "{\"temporal\": []}"}});
    EXPECT_EQ(complete(req, backend).text, "{\"temporal\": []}");
}

TEST(Replay, UnrecordedRequestMisses) {
    CompletionRequest req{"sys", "user", 0.0, 16, "replay"};
    ReplayBackend backend({});
    EXPECT_THROW(complete(req, backend, quick_retry()), ReplayMiss);
}

TEST(Replay, KeyDependsOnModelSystemAndUser) {
    CompletionRequest a{"sys", "user", 0.0, 16, "m"};
    auto b = a, c = a, d = a;
    b.model = "other";
    c.system = "other";
    d.user = "other";
    auto ka = request_key(a);
    EXPECT_NE(ka, request_key(b));
    EXPECT_NE(ka, request_key(c));
    EXPECT_NE(ka, request_key(d));
    a.max_tokens = 99;
    EXPECT_EQ(ka, request_key(a));
}

TEST(Http, UnauthorizedIsNotRetried) {
    std::atomic<int> hits{0};
    MockServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.status = 401;
        });
    });
    HttpBackend backend(http_spec(server.url()));
    EXPECT_THROW(complete({"s", "u", 0.0, 16, "test-model"}, backend, quick_retry()), AuthError);
    EXPECT_EQ(hits, 1);
}

TEST(Http, ServerErrorsAreRetriedThenSucceed) {
    std::atomic<int> hits{0};
    MockServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            if (++hits < 3) {
                res.status = 503;
                return;
            }
            res.set_content(completion_body("{\"temporal\": []}"), "application/json");
        });
    });
    HttpBackend backend(http_spec(server.url()));
    auto res = complete({"s", "u", 0.0, 16, "test-model"}, backend, quick_retry());
    EXPECT_EQ(res.text, "{\"temporal\": []}");
    EXPECT_EQ(res.prompt_tokens, 12);
    EXPECT_EQ(hits, 3);
}

TEST(Http, RetriesGiveUpAfterTheLastAttempt) {
    std::atomic<int> hits{0};
    MockServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.status = 429;
        });
    });
    HttpBackend backend(http_spec(server.url()));
    EXPECT_THROW(complete({"s", "u", 0.0, 16, "test-model"}, backend, quick_retry(2)), BackendUnavailable);
    EXPECT_EQ(hits, 2);
}

TEST(Http, BadRequestIsRejectedWithoutRetry) {
    std::atomic<int> hits{0};
    MockServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.status = 400;
        });
    });
    HttpBackend backend(http_spec(server.url()));
    EXPECT_THROW(complete({"s", "u", 0.0, 16, "test-model"}, backend, quick_retry()), RequestRejected);
    EXPECT_EQ(hits, 1);
}

TEST(Http, SendsBearerKeyAndMessages) {
    ::setenv("STINDEX_TEST_KEY", "sk-test-123", 1);
    std::string auth;
    json sent;
    MockServer server([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
            auth = req.get_header_value("Authorization");
            sent = json::parse(req.body);
            res.set_content(completion_body("ok"), "application/json");
        });
    });
    auto spec = http_spec(server.url());
    spec.auth_env = "STINDEX_TEST_KEY";
    HttpBackend backend(spec);
    complete({"system text", "user text", 0.0, 16, "test-model"}, backend, quick_retry());
    EXPECT_EQ(auth, "Bearer sk-test-123");
    EXPECT_EQ(sent["model"], "test-model");
    EXPECT_EQ(sent["messages"][0]["content"], "system text");
    EXPECT_EQ(sent["messages"][1]["role"], "user");
    ::unsetenv("STINDEX_TEST_KEY");
}

TEST(Payload, FencedReplyParses) {
    auto r = parse_entity_payload(
        "```json\n{\"temporal\": [{\"text\": \"today\", \"value\": \"2025-01-09\", \"span\": [0, 5]}]}\n```",
        default_schema());
    ASSERT_EQ(r.candidates.size(), 1u);
    EXPECT_EQ(r.candidates[0].value, "2025-01-09");
}

TEST(Payload, TrailingCommaIsRepaired) {
    auto r = parse_entity_payload(
        R"({"temporal":[{"text":"today","value":"2025-01-09","span":[0,5],"confidence":0.9},]})", default_schema());
    ASSERT_EQ(r.candidates.size(), 1u);
    EXPECT_EQ(r.candidates[0].span, (std::pair<long, long>{0, 5}));
    EXPECT_DOUBLE_EQ(r.candidates[0].confidence, 0.9);
}

TEST(Payload, ProseWithoutObjectIsUnparseable) {
    EXPECT_THROW(parse_entity_payload("I cannot extract anything.", default_schema()), PayloadUnparseable);
}

TEST(Payload, MissingConfidenceDefaultsToHalf) {
    auto r = parse_entity_payload(R"({"spatial": [{"text": "Perth"}]})", default_schema());
    ASSERT_EQ(r.candidates.size(), 1u);
    EXPECT_DOUBLE_EQ(r.candidates[0].confidence, 0.5);
    EXPECT_EQ(r.candidates[0].value, "Perth");
}

TEST(Payload, MalformedItemsAreDroppedAndCounted) {
    auto r = parse_entity_payload(R"({"temporal": [{"value": "2024"}, 7, {"text": "2024", "value": "2024"}],
                                      "spatial": "Perth"})",
                                  default_schema());
    EXPECT_EQ(r.candidates.size(), 1u);
    EXPECT_EQ(r.dropped, 3u);
}

TEST(Payload, UnterminatedObjectIsClosed) {
    auto r = parse_entity_payload(R"(Sure: {"temporal": [{"text": "May 2024", "value": "2024-05"}])", default_schema());
    EXPECT_EQ(r.candidates.size(), 1u);
}

TEST(Payload, AdversarialInputNeverEscapes) {
    auto schema = load_schema_file(testing_support::data_dir() / "schemas" / "case_study.yaml");
    const std::string seed =
        R"({"temporal":[{"text":"5 May","value":"2024-05-05","span":[3,8],"confidence":0.9}],)"
        R"("spatial":[{"text":"Perth","name":"Perth","qualifier":"WA"}],"disease":[{"text":"measles","label":"measles"}]})";
    const std::string alphabet = "{}[]\",:\\ \n0123456789abcdefnulltrue`\x80\xff";
    std::mt19937 rng(99);
    for (int i = 0; i < 5000; ++i) {
        std::string s = seed;
        int edits = 1 + static_cast<int>(rng() % 8);
        for (int k = 0; k < edits; ++k) {
            auto pos = rng() % (s.size() + 1);
            switch (rng() % 3) {
                case 0: s.insert(s.begin() + pos, alphabet[rng() % alphabet.size()]); break;
                case 1: if (pos < s.size()) s.erase(pos, 1 + rng() % 4); break;
                default: s = s.substr(0, pos); break;
            }
        }
        if (i % 5 == 0) {
            s.clear();
            for (int k = static_cast<int>(rng() % 64); k > 0; --k) s.push_back(static_cast<char>(rng() % 256));
        }
        try {
            auto r = parse_entity_payload(s, schema);
            for (const auto& c : r.candidates) EXPECT_TRUE(schema.find(c.dimension));
        } catch (const PayloadUnparseable&) {
        } catch (const std::exception& e) {
            ADD_FAILURE() << "unexpected " << e.what() << " for input: " << s;
        }
    }
}

TEST(Payload, ReflectionScoresAreClampedAndKeyedById) {
    auto scores = parse_reflection_payload(
        R"({"scores": [{"id": 1, "relevance": 1.4, "accuracy": 0.5, "consistency": -1}, {"id": 0}]})");
    ASSERT_EQ(scores.size(), 1u);
    EXPECT_EQ(scores.at(1), (ReflectionScores{1.0, 0.5, 0.0}));
    EXPECT_THROW(parse_reflection_payload("no"), PayloadUnparseable);
}
