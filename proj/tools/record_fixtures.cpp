// Regenerates data/fixtures/replay.json. A scripted model answers every
// prompt the demo sends, in both demo modes, and a recording backend keeps
// the exact request keys. Script entities are located by their text in the
// document, so the script does not depend on chunk boundaries.
//
//   record_fixtures [--data-dir data] [--out file] [--dump-chunks]

#include <iostream>
#include <map>
#include <regex>

#include "stindex/cli.hpp"

using namespace stindex;

namespace {

struct ScriptedDoc {
    std::string file;
    SourceDocument doc;
    std::vector<Chunk> chunks;
    json script;  // {"entities": [...], "chunks": {"2": {...}}}
};

struct Located {
    const json* item;
    std::size_t chunk;
    long start;
    long end;
};

class ScriptedBackend : public Backend {
public:
    ScriptedBackend(std::map<std::string, ScriptedDoc> docs, SchemaSet schema, bool baseline)
        : Backend(64), docs_(std::move(docs)), schema_(std::move(schema)), baseline_(baseline) {
        for (auto& [id, d] : docs_) locate(d);
    }

    std::string model() const override { return "replay"; }

protected:
    CompletionResponse do_complete(const CompletionRequest& req) override {
        CompletionResponse res;
        res.text = req.system == kReflectionPreamble ? reflection_reply(req.user) : extraction_reply(req.user);
        return res;
    }

private:
    static std::string line_value(const std::string& user, const std::string& label) {
        auto pos = user.find("\n" + label + ": ");
        if (pos == std::string::npos && user.rfind(label + ": ", 0) == 0) pos = 0;
        else if (pos != std::string::npos) ++pos;
        if (pos == std::string::npos) throw std::runtime_error("prompt has no '" + label + "' line");
        auto start = pos + label.size() + 2;
        return user.substr(start, user.find('\n', start) - start);
    }

    const ScriptedDoc& doc_for(const std::string& user) const {
        auto id = line_value(user, "Document");
        auto it = docs_.find(id);
        if (it == docs_.end()) throw std::runtime_error("script has no document " + id);
        return it->second;
    }

    bool active(const json& item) const {
        auto only = item.value("only", std::string());
        return only.empty() || only == (baseline_ ? "baseline" : "full");
    }

    void locate(ScriptedDoc& d) {
        text::Utf8Index idx(d.doc.body);
        for (const auto& item : d.script.at("entities")) {
            auto surface = item.at("text").get<std::string>();
            auto nth = item.value("occurrence", 1);
            std::size_t byte = std::string::npos, from = 0;
            for (int k = 0; k < nth; ++k) {
                byte = d.doc.body.find(surface, from);
                if (byte == std::string::npos) throw std::runtime_error(d.file + ": text not found: " + surface);
                from = byte + 1;
            }
            auto a = idx.char_index(byte);
            auto b = a + text::char_length(surface);
            bool placed = false;
            for (const auto& c : d.chunks) {
                if (a >= c.char_start && b <= c.char_end) {
                    located_[d.doc.doc_id].push_back(
                        {&item, c.chunk_index, static_cast<long>(a - c.char_start), static_cast<long>(b - c.char_start)});
                    placed = true;
                    break;
                }
            }
            if (!placed) throw std::runtime_error(d.file + ": '" + surface + "' straddles a chunk boundary");
        }
    }

    std::string extraction_reply(const std::string& user) const {
        const auto& d = doc_for(user);
        auto chunk_line = line_value(user, "Chunk");
        auto ordinal = std::stoul(chunk_line.substr(0, chunk_line.find(' ')));
        auto chunk = ordinal - 1;
        json overrides = json::object();
        if (d.script.contains("chunks") && d.script["chunks"].contains(std::to_string(ordinal)))
            overrides = d.script["chunks"][std::to_string(ordinal)];
        if (overrides.contains("raw")) return overrides["raw"].get<std::string>();

        ordered_json reply = ordered_json::object();
        for (const auto& dim : schema_.dimensions) reply[dim.name] = ordered_json::array();
        auto it = located_.find(d.doc.doc_id);
        if (it != located_.end()) {
            for (const auto& loc : it->second) {
                const auto& item = *loc.item;
                if (loc.chunk != chunk || !active(item)) continue;
                auto dim = item.at("dim").get<std::string>();
                ordered_json out = {{"text", item.at("text")}};
                if (!item.value("no_span", false)) {
                    auto shift = item.value("span_shift", 0L);
                    out["span"] = {loc.start + shift, loc.end + shift};
                }
                auto pick = [&](const char* key) {
                    std::string b = std::string("baseline_") + key;
                    if (baseline_ && item.contains(b)) return item.at(b);
                    return item.contains(key) ? item.at(key) : json(nullptr);
                };
                for (const char* key : {"value", "name", "qualifier", "label", "attributes"}) {
                    auto v = pick(key);
                    if (!v.is_null()) out[key] = ordered_json::parse(v.dump());
                }
                out["confidence"] = item.value("confidence", 0.9);
                reply[dim].push_back(out);
            }
        }
        auto body = reply.dump(2);
        auto style = overrides.value("style", std::string("plain"));
        if (style == "fenced") return "```json\n" + body + "\n```";
        if (style == "prose") return "Here are the entities I found in this chunk.\n\n" + body + "\n\nLet me know if you need more.";
        if (style == "trailing_comma") {
            auto last = body.rfind(']');
            return body.substr(0, last + 1) + "," + body.substr(last + 1);
        }
        return body;
    }

    std::string reflection_reply(const std::string& user) const {
        const auto& d = doc_for(user);
        auto chunk = std::stoul(line_value(user, "Chunk index"));
        if (d.script.contains("chunks")) {
            auto key = std::to_string(chunk + 1);
            if (d.script["chunks"].contains(key) && d.script["chunks"][key].contains("reflection_raw"))
                return d.script["chunks"][key]["reflection_raw"].get<std::string>();
        }
        static const std::regex candidate(R"(^\[(\d+)\] ([a-z0-9_]+): ("(?:[^"\\]|\\.)*") -> )");
        ordered_json scores = ordered_json::array();
        std::istringstream lines(user.substr(user.find("[CANDIDATES]")));
        std::string line;
        while (std::getline(lines, line)) {
            std::smatch m;
            if (!std::regex_search(line, m, candidate)) continue;
            auto id = std::stoul(m[1].str());
            auto dim = m[2].str();
            auto surface = json::parse(m[3].str()).get<std::string>();
            json s = {0.9, 0.9, 0.9};
            for (const auto& loc : located_.at(d.doc.doc_id)) {
                const auto& item = *loc.item;
                if (loc.chunk == chunk && item.at("dim") == dim && item.at("text") == surface && item.contains("scores")) {
                    s = item.at("scores");
                    break;
                }
            }
            scores.push_back({{"id", id}, {"relevance", s[0]}, {"accuracy", s[1]}, {"consistency", s[2]}});
        }
        return ordered_json{{"scores", scores}}.dump();
    }

    std::map<std::string, ScriptedDoc> docs_;
    std::map<std::string, std::vector<Located>> located_;
    SchemaSet schema_;
    bool baseline_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"record replay fixtures for the demo corpus", "record_fixtures"};
    std::string data_dir = STINDEX_DATA_DIR;
    std::string out;
    bool dump = false;
    app.add_option("--data-dir", data_dir, "fixture data directory");
    app.add_option("--out", out, "replay file (default <data-dir>/fixtures/replay.json)");
    app.add_flag("--dump-chunks", dump, "print chunk boundaries and exit");
    CLI11_PARSE(app, argc, argv);
    namespace fs = std::filesystem;
    fs::path data(data_dir);
    if (out.empty()) out = (data / "fixtures" / "replay.json").string();

    try {
        auto settings = cli_detail::demo_settings(data, false);
        auto schema = load_schema_file(settings.config);
        auto script = json::parse(text::read_file(data / "fixtures" / "llm_script.json"));
        ChunkParams params;
        params.strategy = *parse_chunk_strategy(settings.chunk_strategy);
        params.size = settings.chunk_size;
        params.overlap = settings.chunk_overlap;

        std::map<std::string, ScriptedDoc> docs;
        for (const auto& path : cli_detail::expand_inputs(settings.inputs)) {
            ScriptedDoc d;
            d.file = fs::path(path).filename().string();
            d.doc = load_document(spec_for_locator(path));
            d.chunks = chunk_document(d.doc, params);
            d.script = script.at("documents").contains(d.file) ? script["documents"][d.file]
                                                                : json{{"entities", json::array()}};
            if (dump) {
                std::cout << "== " << d.file << "  id=" << d.doc.doc_id << "  chunks=" << d.chunks.size() << '\n';
                for (const auto& c : d.chunks)
                    std::cout << "-- chunk " << c.chunk_index << " [" << c.char_start << "," << c.char_end << ")\n"
                              << c.text << '\n';
            }
            docs[d.doc.doc_id] = std::move(d);
        }
        if (dump) return 0;

        std::map<std::string, std::string> recorded;
        for (bool baseline : {false, true}) {
            auto s = cli_detail::demo_settings(data, baseline);
            s.fixtures.clear();
            auto recorder = std::make_shared<RecordingBackend>(std::make_shared<ScriptedBackend>(docs, schema, baseline));
            auto p = cli_detail::prepare(s, recorder);
            cli_detail::run_extraction(p, s);
            auto r = recorder->recorded();
            recorded.insert(r.begin(), r.end());
        }
        json j = json::object();
        for (const auto& [k, v] : recorded) j[k] = v;
        text::write_file(out, j.dump(2) + "\n");
        std::cout << recorded.size() << " responses -> " << out << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
