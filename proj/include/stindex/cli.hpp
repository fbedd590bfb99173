#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "stindex/analytics.hpp"
#include "stindex/error.hpp"
#include "stindex/evaluation.hpp"
#include "stindex/extraction.hpp"
#include "stindex/geo.hpp"
#include "stindex/ingest.hpp"
#include "stindex/llm.hpp"
#include "stindex/schema.hpp"
#include "stindex/store.hpp"

#ifndef STINDEX_DATA_DIR
#define STINDEX_DATA_DIR "data"
#endif

namespace stindex {

namespace cli_detail {

namespace fs = std::filesystem;

inline std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

inline bool supported_extension(const fs::path& p) {
    auto ext = text::to_lower(p.extension().string());
    return ext == ".txt" || ext == ".md" || ext == ".html" || ext == ".htm";
}

/// Expands directories (sorted, non-recursive) and keeps URLs and "-" as is.
inline std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const auto& in : inputs) {
        if (in != "-" && fs::is_directory(in)) {
            std::vector<std::string> files;
            for (const auto& entry : fs::directory_iterator(in))
                if (entry.is_regular_file() && supported_extension(entry.path())) files.push_back(entry.path().string());
            std::sort(files.begin(), files.end());
            out.insert(out.end(), files.begin(), files.end());
        } else {
            out.push_back(in);
        }
    }
    return out;
}

struct ExtractSettings {
    std::string config;
    std::vector<std::string> inputs;
    std::string backend = "replay";
    std::string fixtures;
    std::string base_url = env_or("STINDEX_BASE_URL", "");
    std::string model = env_or("STINDEX_MODEL", "");
    std::string geocoder = "offline";
    std::string gazetteer = std::string(STINDEX_DATA_DIR) + "/gazetteer.tsv";
    std::string out;
    std::string manifest;
    std::string record;
    std::string chunk_strategy = "sliding_window";
    std::size_t chunk_size = 2000;
    std::size_t chunk_overlap = 200;
    bool no_reflection = false;
    std::optional<double> reflection_threshold;
    bool no_memory = false;
    bool no_context_correction = false;
    std::size_t workers = 0;
};

inline void add_extract_options(CLI::App& cmd, ExtractSettings& s, bool corpus_required) {
    auto* config = cmd.add_option("--config", s.config, "schema file (.json, .yaml, .yml)");
    auto* input = cmd.add_option("--input", s.inputs, "files, directories, URLs, or - for stdin");
    if (corpus_required) {
        config->required();
        input->required();
    }
    cmd.add_option("--backend", s.backend, "http or replay")->check(CLI::IsMember({"http", "replay"}));
    cmd.add_option("--fixtures", s.fixtures, "replay fixture file");
    cmd.add_option("--base-url", s.base_url, "OpenAI-compatible endpoint (default $STINDEX_BASE_URL)");
    cmd.add_option("--model", s.model, "model name (default $STINDEX_MODEL)");
    cmd.add_option("--geocoder", s.geocoder, "http or offline")->check(CLI::IsMember({"http", "offline"}));
    cmd.add_option("--gazetteer", s.gazetteer, "gazetteer TSV");
    cmd.add_option("--chunk-strategy", s.chunk_strategy, "sliding_window, paragraph, element, semantic");
    cmd.add_option("--chunk-size", s.chunk_size, "chunk size in characters");
    cmd.add_option("--chunk-overlap", s.chunk_overlap, "overlap in characters");
    cmd.add_flag("--no-reflection", s.no_reflection, "skip the reflection pass");
    cmd.add_option("--reflection-threshold", s.reflection_threshold, "one threshold for all three scores");
    cmd.add_flag("--no-memory", s.no_memory, "baseline mode: no document memory or anchors");
    cmd.add_flag("--no-context-correction", s.no_context_correction, "keep unbiased geocoder results");
    cmd.add_option("--workers", s.workers, "documents extracted in parallel (0 = all cores)");
    cmd.add_option("--manifest", s.manifest, "write the run manifest here");
    cmd.add_option("--record", s.record, "save every completion as a replay fixture file");
}

struct Pipeline {
    SchemaSet schema;
    std::vector<SourceDocument> docs;
    std::vector<CorpusEntry> corpus;
    std::shared_ptr<Backend> backend;
    std::shared_ptr<RecordingBackend> recorder;
    ChunkParams chunking;
    ExtractionOptions options;
    RunManifest manifest;
};

/// `backend` replaces the one the settings describe (fixture recording).
inline Pipeline prepare(const ExtractSettings& s, std::shared_ptr<Backend> backend = nullptr) {
    Pipeline p;
    p.schema = load_schema_file(s.config);

    auto strategy = parse_chunk_strategy(s.chunk_strategy);
    if (!strategy) throw InvalidChunkParams("unknown chunk strategy '" + s.chunk_strategy + "'");
    p.chunking.strategy = *strategy;
    p.chunking.size = s.chunk_size;
    p.chunking.overlap = s.chunk_overlap;

    http::HostRateLimiter limiter(FetchPolicy{}.min_interval);
    for (const auto& locator : expand_inputs(s.inputs)) {
        auto spec = spec_for_locator(locator);
        if (locator == "-") {
            std::string body((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
            spec = {Origin::raw_text, body, {}};
        }
        auto doc = load_document(spec, FetchPolicy{}, &limiter);
        p.corpus.push_back({locator == "-" ? "<stdin>" : locator, doc.doc_id, text::fnv1a_hex(doc.body)});
        p.docs.push_back(std::move(doc));
    }

    BackendSpec spec;
    if (s.backend == "http") {
        spec.kind = BackendKind::openai_compatible_http;
        spec.base_url = s.base_url;
        spec.model = s.model.empty() ? "gpt-4o-mini" : s.model;
    } else {
        spec.kind = BackendKind::replay_fixture;
        spec.fixture_path = s.fixtures.empty() ? std::string(STINDEX_DATA_DIR) + "/fixtures/replay.json" : s.fixtures;
        spec.model = s.model.empty() ? "replay" : s.model;
    }
    p.backend = backend ? std::move(backend) : make_backend(spec);
    if (!s.record.empty()) {
        p.recorder = std::make_shared<RecordingBackend>(p.backend);
        p.backend = p.recorder;
    }

    GeocoderOptions geo;
    if (s.geocoder == "http") {
        geo.http_url = env_or("STINDEX_GEOCODER_URL", "");
        if (geo.http_url.empty()) spdlog::warn("STINDEX_GEOCODER_URL is not set; using the gazetteer only");
    }
    auto gazetteer = std::make_shared<const Gazetteer>(Gazetteer::load(s.gazetteer));
    p.options.geocoder = std::make_shared<const Geocoder>(gazetteer, geo);
    p.options.reflection = !s.no_reflection;
    if (s.reflection_threshold) p.options.thresholds = ReflectionThresholds::uniform(*s.reflection_threshold);
    p.options.use_memory = !s.no_memory;
    p.options.context_correction = !s.no_context_correction;
    p.options.limits.model = spec.model;

    p.manifest.schema_version = p.schema.version;
    p.manifest.schema_hash = text::fnv1a_hex(serialize_schema(p.schema));
    p.manifest.backend = spec;
    p.manifest.corpus = p.corpus;
    p.manifest.chunking = p.chunking;
    p.manifest.options = p.options;
    p.manifest.geocoder = geo.http_url.empty() ? "offline" : "http";
    return p;
}

inline std::vector<ExtractionResult> run_extraction(Pipeline& p, const ExtractSettings& s) {
    p.manifest.started_at = utc_now_iso();
    auto results = extract_corpus(p.docs, p.schema, *p.backend, p.chunking, p.options, s.workers);
    p.manifest.finished_at = utc_now_iso();
    if (p.recorder) p.recorder->save(s.record);
    return results;
}

/// The offline demo configuration; `baseline` switches off memory,
/// reflection and context correction.
inline ExtractSettings demo_settings(const fs::path& data, bool baseline) {
    ExtractSettings s;
    s.config = (data / "schemas" / "case_study.yaml").string();
    s.inputs = {(data / "corpus").string()};
    s.fixtures = (data / "fixtures" / "replay.json").string();
    s.gazetteer = (data / "gazetteer.tsv").string();
    s.chunk_strategy = "paragraph";
    s.chunk_size = 400;
    s.chunk_overlap = 40;
    s.workers = 4;
    s.no_memory = s.no_reflection = s.no_context_correction = baseline;
    return s;
}

struct AnalyzeSettings {
    std::string run;
    std::string out;
    std::string config;
    AnalyticsParams params;
};

inline void add_analytics_options(CLI::App& cmd, AnalyticsParams& p) {
    cmd.add_option("--eps-km", p.cluster.eps_km, "spatial radius in km");
    cmd.add_option("--eps-days", p.cluster.eps_days, "temporal radius in days");
    cmd.add_option("--min-pts", p.cluster.min_pts, "minimum neighbourhood size, point included");
    cmd.add_option("--burst-window", p.burst.window_days, "burst window in days");
    cmd.add_option("--burst-step", p.burst.step_days, "burst step in days");
    cmd.add_option("--burst-z", p.burst.z, "burst z threshold");
    cmd.add_option("--burst-min-count", p.burst.min_count, "minimum events in a burst window");
}

inline std::string summarize(const std::vector<ExtractionResult>& results) {
    std::size_t kept = 0, filtered = 0, chunks = 0, failed = 0;
    for (const auto& r : results) {
        kept += r.kept.size();
        filtered += r.filtered.size();
        chunks += r.chunks.size();
        for (const auto& c : r.chunks) failed += c.state != ChunkState::ok;
    }
    return std::to_string(results.size()) + " documents, " + std::to_string(chunks) + " chunks (" +
           std::to_string(failed) + " failed), " + std::to_string(kept) + " kept, " + std::to_string(filtered) +
           " filtered";
}

inline EvalOptions eval_options_for(const SchemaSet* schema, double tau) {
    EvalOptions o;
    o.tau = tau;
    if (schema) {
        o.temporal_dimension = schema->temporal().name;
        o.spatial_dimension = schema->spatial().name;
    }
    return o;
}

}  // namespace cli_detail

/// Entry point behind the `stindex` binary. Exit codes: 0 success, 1 user
/// error, 2 internal error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;

    CLI::App app{"Schema-driven spatiotemporal extraction and analytics", "stindex"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "log progress to stderr");

    ExtractSettings ex;
    auto* extract = app.add_subcommand("extract", "extract entities from documents into run.jsonl");
    add_extract_options(*extract, ex, true);
    extract->add_option("--out", ex.out, "run file")->required();

    AnalyzeSettings an;
    auto* analyze_cmd = app.add_subcommand("analyze", "cluster, burst and co-occurrence analytics over a run");
    analyze_cmd->add_option("--run", an.run, "run file")->required();
    analyze_cmd->add_option("--out", an.out, "analytics file")->required();
    analyze_cmd->add_option("--config", an.config, "schema, for breakdown ordering");
    add_analytics_options(*analyze_cmd, an.params);

    std::string pred, gold, report_out, baseline, eval_config;
    double tau = 0.5;
    auto* eval = app.add_subcommand("eval", "score a run against gold annotations");
    eval->add_option("--pred", pred, "run file")->required();
    eval->add_option("--gold", gold, "gold JSON-lines file")->required();
    eval->add_option("--out", report_out, "report file");
    eval->add_option("--tau", tau, "word-overlap threshold for place names");
    eval->add_option("--baseline", baseline, "baseline run file, shown as the first row");
    eval->add_option("--config", eval_config, "schema naming the time and place dimensions");

    AnalyzeSettings ex_dash;
    std::string manifest_path;
    auto* export_cmd = app.add_subcommand("export-dashboard", "write the single-file dashboard bundle");
    export_cmd->add_option("--run", ex_dash.run, "run file")->required();
    export_cmd->add_option("--config", ex_dash.config, "schema file")->required();
    export_cmd->add_option("--out", ex_dash.out, "bundle file")->required();
    export_cmd->add_option("--manifest", manifest_path, "run manifest, for its digest");
    add_analytics_options(*export_cmd, ex_dash.params);

    std::string validate_path;
    bool print_normalized = false;
    auto* validate = app.add_subcommand("schema-validate", "check a schema file");
    validate->add_option("config", validate_path, "schema file")->required();
    validate->add_flag("--print", print_normalized, "print the normalized schema");

    std::string data_dir = STINDEX_DATA_DIR;
    std::string out_dir = "demo-out";
    auto* demo = app.add_subcommand("demo", "run the bundled fixture pipeline offline");
    demo->add_option("--data-dir", data_dir, "fixture data directory");
    demo->add_option("--out-dir", out_dir, "output directory");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    auto logger = spdlog::stderr_color_mt("stindex-" + std::to_string(reinterpret_cast<std::uintptr_t>(&app)));
    logger->set_level(verbose ? spdlog::level::info : spdlog::level::warn);
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(logger);
    struct Restore {
        std::shared_ptr<spdlog::logger> prev;
        std::string name;
        ~Restore() {
            spdlog::set_default_logger(prev);
            spdlog::drop(name);
        }
    } restore{previous, logger->name()};

    try {
        if (extract->parsed()) {
            auto p = prepare(ex);
            auto results = run_extraction(p, ex);
            write_run(results, ex.out);
            if (!ex.manifest.empty()) text::write_file(ex.manifest, p.manifest.to_json().dump(2) + "\n");
            out << summarize(results) << " -> " << ex.out << '\n';
        } else if (analyze_cmd->parsed()) {
            std::optional<SchemaSet> schema;
            if (!an.config.empty()) schema = load_schema_file(an.config);
            auto report = analyze(read_run(an.run), an.params, schema ? &*schema : nullptr);
            text::write_file(an.out, dump_stable(analytics_to_json(report)) + "\n");
            out << report.events.events.size() << " events, " << report.clustering.clusters.size() << " clusters, "
                << report.bursts.size() << " bursts -> " << an.out << '\n';
        } else if (eval->parsed()) {
            std::optional<SchemaSet> schema;
            if (!eval_config.empty()) schema = load_schema_file(eval_config);
            auto opts = eval_options_for(schema ? &*schema : nullptr, tau);
            auto gold_records = load_gold(gold, opts);
            auto report = evaluate_run(read_run(pred), gold_records, opts);
            std::vector<TableRow> rows;
            std::optional<EvalReport> base;
            if (!baseline.empty()) {
                base = evaluate_run(read_run(baseline), gold_records, opts);
                rows.push_back({"run", "Baseline", &*base});
            }
            rows.push_back({"run", "Full", &report});
            out << render_table(rows);
            if (!report_out.empty()) text::write_file(report_out, report_to_json(report).dump(2) + "\n");
        } else if (export_cmd->parsed()) {
            auto schema = load_schema_file(ex_dash.config);
            auto run = read_run(ex_dash.run);
            auto report = analyze(run, ex_dash.params, &schema);
            // Without a manifest the bundle is tied to the run file's bytes instead.
            auto digest = manifest_path.empty()
                              ? text::fnv1a_hex(text::read_file(ex_dash.run))
                              : json::parse(text::read_file(manifest_path)).at("digest").get<std::string>();
            export_dashboard_bundle(run, report, schema, digest, ex_dash.out);
            out << "bundle -> " << ex_dash.out << '\n';
        } else if (validate->parsed()) {
            auto schema = load_schema_file(validate_path);
            if (print_normalized) out << serialize_schema(schema, config_format_for(validate_path));
            out << "ok: " << schema.dimensions.size() << " dimensions\n";
        } else if (demo->parsed()) {
            fs::path data(data_dir), dir(out_dir);
            auto s = demo_settings(data, false);
            auto full = prepare(s);
            auto results = run_extraction(full, s);
            write_run(results, dir / "run.jsonl");
            text::write_file(dir / "manifest.json", full.manifest.to_json().dump(2) + "\n");

            auto bs = demo_settings(data, true);
            auto basep = prepare(bs);
            auto base_results = run_extraction(basep, bs);
            write_run(base_results, dir / "baseline-run.jsonl");

            auto analytics = analyze(results, {}, &full.schema);
            text::write_file(dir / "analytics.json", dump_stable(analytics_to_json(analytics)) + "\n");
            export_dashboard_bundle(results, analytics, full.schema, full.manifest.digest(), dir / "bundle.json");

            auto opts = eval_options_for(&full.schema, 0.5);
            auto gold_records = load_gold(data / "gold.jsonl", opts);
            auto report = evaluate_run(results, gold_records, opts);
            auto base_report = evaluate_run(base_results, gold_records, opts);
            text::write_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
            text::write_file(dir / "baseline-report.json", report_to_json(base_report).dump(2) + "\n");

            out << summarize(results) << '\n';
            out << analytics.events.events.size() << " events, " << analytics.clustering.clusters.size()
                << " clusters, " << analytics.bursts.size() << " bursts\n\n";
            out << render_table({{"replay", "Baseline", &base_report}, {"replay", "Full", &report}});
            out << "\noutputs in " << dir.string() << '\n';
        }
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.user_facing() ? 1 : 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args);
}

}  // namespace stindex
