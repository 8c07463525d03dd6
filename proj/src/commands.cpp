// SPDX-License-Identifier: Apache-2.0
#include "slicelab/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "slicelab/error.hpp"

namespace slicelab::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_location(const fs::path& a, const fs::path& b) {
    std::error_code ec1, ec2;
    const auto ca = fs::weakly_canonical(a, ec1);
    const auto cb = fs::weakly_canonical(b, ec2);
    return !ec1 && !ec2 && ca == cb;
}

Vocabulary load_vocab(const fs::path& model_dir) {
    const fs::path path = model_dir / kVocabName;
    if (!fs::exists(path)) {
        throw ValidationError("model at " + model_dir.string() + " has no " + kVocabName +
                              "; create it with `init --corpus`");
    }
    return Vocabulary::load(path);
}

TokenSeq encode_file(const Vocabulary& vocab, const fs::path& path) {
    std::size_t unknown = 0;
    TokenSeq tokens = vocab.encode(read_text_file(path), &unknown);
    if (unknown > 0) {
        warn(path.string() + ": " + std::to_string(unknown) + " characters outside the vocabulary mapped to id 0");
    }
    return tokens;
}

void copy_vocab(const fs::path& from_dir, const fs::path& to_dir) {
    const fs::path src = from_dir / kVocabName;
    if (fs::exists(src)) fs::copy_file(src, to_dir / kVocabName, fs::copy_options::overwrite_existing);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<TokenSeq> calibration_windows(const CalibrationOptions& cal, const Vocabulary& vocab,
                                          const fs::path& default_corpus, const ModelConfig& config) {
    const fs::path corpus = cal.corpus.value_or(default_corpus);
    const std::size_t length = cal.length == 0 ? config.max_seq_len : cal.length;
    if (length > config.max_seq_len) {
        throw ValidationError("calibration length " + std::to_string(length) + " exceeds max_seq_len " +
                              std::to_string(config.max_seq_len));
    }
    return sample_calibration(encode_file(vocab, corpus), cal.count, length, cal.seed);
}

struct Rotated {
    ModelWeights weights;
    RotationPlan plan;
};

Rotated fold_and_rotate(const StoredModel& stored, const std::vector<TokenSeq>& calibration, RotationMode mode) {
    if (stored.slice) throw ValidationError("model is already sliced; start from an unsliced model");
    const ModelWeights folded = fold_norm_weights(stored.weights);
    RotationPlan plan = compute_rotation(folded, stored.config, calibration, mode);
    ModelWeights rotated = apply_rotation(folded, stored.config, plan);
    return Rotated{std::move(rotated), std::move(plan)};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

double parse_number(const std::string& text, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw ValidationError(where + ": '" + text + "' is not a number");
    return v;
}

std::string fit_usage_hint() {
    return "expected a CSV with a header row, a sparsity column and metric columns; usage: "
           "slicelab fit --csv sweep.csv --metric ppl|<task>|y [--transform ln_ppl_ratio|ln_acc_ratio]";
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> resolve_grid(std::vector<double> grid, std::size_t d) {
    if (grid.empty()) {
        for (double s : {0.0, 0.125, 0.25, 0.375, 0.5}) {
            const double kept = (1.0 - s) * static_cast<double>(d);
            if (kept == std::floor(kept)) grid.push_back(s);
        }
    }
    for (double s : grid) validate_sparsity(d, s);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

TaskFile parse_task_arg(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
        if (eq == 0 || eq + 1 == arg.size()) throw ValidationError("task '" + arg + "' must be name=path");
        return TaskFile{arg.substr(0, eq), arg.substr(eq + 1)};
    }
    const fs::path p(arg);
    return TaskFile{p.stem().string(), p};
}

std::vector<McItem> load_mc_items(const fs::path& path, const Vocabulary& vocab) {
    std::istringstream in(read_text_file(path));
    std::vector<McItem> items;
    std::size_t unknown = 0;
    std::string line;
    std::size_t line_no = 0;
    auto encode = [&](const std::string& text) {
        std::size_t u = 0;
        TokenSeq t = vocab.encode(text, &u);
        unknown += u;
        return t;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            const auto j = nlohmann::json::parse(line);
            McItem item;
            item.context = encode(j.at("context").get<std::string>());
            for (const auto& c : j.at("choices")) item.choices.push_back(encode(c.get<std::string>()));
            const auto gold = j.at("gold").get<long long>();
            if (gold < 0) throw ValidationError(where + ": gold must be non-negative");
            item.gold_index = static_cast<std::size_t>(gold);
            item.validate();
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(where + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    if (items.empty()) throw ValidationError(path.string() + ": no items");
    if (unknown > 0) warn(path.string() + ": " + std::to_string(unknown) + " characters outside the vocabulary");
    return items;
}

// ---------------------------------------------------------------------------
// init / train / slice / eval

ModelConfig cmd_init(const InitOptions& opt) {
    std::optional<Vocabulary> vocab;
    if (opt.corpus) vocab = Vocabulary::from_text(read_text_file(*opt.corpus));
    std::size_t v = opt.vocab;
    if (v == 0) {
        if (!vocab) throw ValidationError("init: give --vocab or --corpus");
        v = vocab->size();
    } else if (vocab && v < vocab->size()) {
        throw ValidationError("init: --vocab " + std::to_string(v) + " is smaller than the corpus vocabulary of " +
                              std::to_string(vocab->size()) + " characters");
    }
    const ModelConfig config =
        ModelConfig::make(opt.d, opt.m, opt.heads, opt.head_dim, opt.kv_heads, opt.blocks, v, opt.max_seq_len);
    config.validate(true);
    if (!(opt.init_std > 0.0) || !std::isfinite(opt.init_std)) throw ValidationError("init: --init-std must be > 0");
    save_model(opt.out, init_model(config, opt.seed, opt.init_std), config);
    if (vocab) vocab->save(opt.out / kVocabName);
    return config;
}

std::vector<double> cmd_train(const TrainOptions& opt) {
    if (same_location(opt.model, opt.out)) throw ValidationError("train: --out must differ from --model");
    StoredModel stored = load_model(opt.model);
    const Vocabulary vocab = load_vocab(opt.model);
    const TokenSeq tokens = encode_file(vocab, opt.corpus);
    const std::vector<double> losses = train(stored.weights, stored.config, tokens, opt.train);
    save_model(opt.out, stored.weights, stored.config, stored.slice);
    copy_vocab(opt.model, opt.out);
    if (opt.loss_csv) {
        std::string csv = "step,loss\n";
        for (std::size_t i = 0; i < losses.size(); ++i) csv += std::to_string(i) + "," + format_double(losses[i]) + "\n";
        write_file(*opt.loss_csv, csv);
    }
    return losses;
}

SliceInfo cmd_slice(const SliceOptions& opt) {
    if (same_location(opt.model, opt.out)) throw ValidationError("slice: --out must differ from --model");
    const StoredModel stored = load_model(opt.model);
    const SparsityLevel level = validate_sparsity(stored.config.d, opt.s);
    const Vocabulary vocab = load_vocab(opt.model);
    const auto calibration = calibration_windows(opt.calibration, vocab, opt.corpus, stored.config);
    const Rotated rotated = fold_and_rotate(stored, calibration, opt.mode);
    const SlicedModel sliced = slice_model(rotated.weights, stored.config, rotated.plan, level);
    const SliceInfo info{level.s, level.d_kept, to_string(opt.mode)};
    save_model(opt.out, sliced.weights, sliced.config, info);
    copy_vocab(opt.model, opt.out);
    return info;
}

EvalResult cmd_eval(const EvalOptions& opt) {
    if (!opt.corpus && opt.tasks.empty()) throw ValidationError("eval: give --corpus and/or --task");
    const StoredModel stored = load_model(opt.model);
    const Vocabulary vocab = load_vocab(opt.model);
    EvalResult result;
    if (opt.corpus) {
        const TokenSeq tokens = encode_file(vocab, *opt.corpus);
        result.ppl = dataset_perplexity(stored.weights, tokens, stored.config, opt.max_tokens);
    }
    for (const auto& task : opt.tasks) {
        const auto items = load_mc_items(task.path, vocab);
        result.accuracy.emplace_back(task.name, mc_accuracy(stored.weights, items, stored.config));
    }
    if (opt.out) write_file(*opt.out, to_json(result));
    return result;
}

std::string to_json(const EvalResult& result) {
    ordered_json j;
    if (result.ppl) {
        j["token_ppl"] = result.ppl->ppl;
        j["mean_nll"] = result.ppl->mean_nll;
        j["tokens"] = result.ppl->token_count;
    }
    ordered_json acc = ordered_json::object();
    for (const auto& [name, value] : result.accuracy) acc[name] = value;
    j["accuracy"] = acc;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// sweep

namespace {

struct PointResult {
    SweepRecord record;
    std::size_t d_kept = 0;
};

PointResult evaluate_point(const Rotated& rotated, const ModelConfig& config, const SparsityLevel& level,
                           const TokenSeq& stream, std::size_t max_tokens,
                           const std::vector<std::pair<std::string, std::vector<McItem>>>& tasks) {
    const SlicedModel sliced = slice_model(rotated.weights, config, rotated.plan, level);
    const ModelConfig& cfg = sliced.config;

    // One pass over the chunks gives both the token NLL and the pooled final
    // states used for the embedding entropy.
    const std::size_t limit = max_tokens == 0 ? stream.size() : std::min(max_tokens, stream.size());
    NllTotals totals;
    std::vector<double> pooled;
    for (std::size_t start = 0; start < limit; start += cfg.max_seq_len) {
        const std::size_t len = std::min(cfg.max_seq_len, limit - start);
        if (len < 2) break;
        const auto chunk = std::span<const TokenId>(stream).subspan(start, len);
        const ActivationTrace trace = capture_trace(sliced.weights, chunk, cfg);
        totals.merge(NllTotals{sequence_nll(unembed(sliced.weights, trace.final_states, cfg), chunk), len - 1});
        pooled.insert(pooled.end(), trace.final_states.data().begin(), trace.final_states.data().end());
    }

    PointResult out;
    out.record.s = level.s;
    out.d_kept = level.d_kept;
    if (totals.tokens > 0) {
        out.record.token_ppl = totals.result().ppl;
        const double kappa = kappa_gaussian(pooled);
        out.record.log2_emb_ppl = log2_embedding_ppl(make_entropy_estimate(kappa, cfg.max_seq_len, level.d_kept));
    }
    for (const auto& [name, items] : tasks) {
        out.record.mc_acc.emplace_back(name, mc_accuracy(sliced.weights, items, cfg));
    }
    return out;
}

std::optional<double> baseline_ppl(const SweepReport& report) {
    if (report.records.empty() || report.records.front().s != 0.0) return std::nullopt;
    return report.records.front().token_ppl;
}

std::optional<double> baseline_acc(const SweepReport& report, std::size_t task) {
    if (report.records.empty() || report.records.front().s != 0.0) return std::nullopt;
    return report.records.front().mc_acc.at(task).second;
}

std::optional<double> derived_ppl(const SweepReport& report, const SweepRecord& r) {
    const auto p0 = baseline_ppl(report);
    if (!p0 || !r.token_ppl || !(*p0 > 1.0) || !(*r.token_ppl > 1.0)) return std::nullopt;
    return y_ppl(*p0, *r.token_ppl);
}

std::optional<double> derived_acc(const SweepReport& report, const SweepRecord& r, std::size_t task) {
    const auto a0 = baseline_acc(report, task);
    const double acc = r.mc_acc.at(task).second;
    if (!a0 || !(*a0 > 0.0) || !(acc > 0.0)) return std::nullopt;
    return y_acc(*a0, acc);
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

template <class Json>
Json optional_number(const std::optional<double>& v) {
    return v ? Json(*v) : Json(nullptr);
}

}  // namespace

SweepReport cmd_sweep(const SweepOptions& opt) {
    const StoredModel stored = load_model(opt.model);
    if (stored.slice) throw ValidationError("sweep: model is already sliced; start from an unsliced model");
    const std::vector<double> grid = resolve_grid(opt.grid, stored.config.d);

    const Vocabulary vocab = load_vocab(opt.model);
    const std::string corpus_text = read_text_file(opt.corpus);
    std::size_t unknown = 0;
    const TokenSeq stream = vocab.encode(corpus_text, &unknown);
    if (unknown > 0) warn(opt.corpus.string() + ": " + std::to_string(unknown) + " characters mapped to id 0");

    std::vector<std::pair<std::string, std::vector<McItem>>> tasks;
    for (const auto& t : opt.tasks) {
        for (const auto& [name, items] : tasks) {
            if (name == t.name) throw ValidationError("sweep: duplicate task name '" + t.name + "'");
        }
        tasks.emplace_back(t.name, load_mc_items(t.path, vocab));
    }

    const auto calibration = calibration_windows(opt.calibration, vocab, opt.corpus, stored.config);
    const Rotated rotated = fold_and_rotate(stored, calibration, opt.mode);

    std::vector<PointResult> points;
    if (opt.parallel && grid.size() > 1) {
        std::vector<std::future<PointResult>> futures;
        for (double s : grid) {
            const SparsityLevel level = validate_sparsity(stored.config.d, s);
            futures.push_back(std::async(std::launch::async, [&, level] {
                return evaluate_point(rotated, stored.config, level, stream, opt.max_tokens, tasks);
            }));
        }
        for (auto& f : futures) points.push_back(f.get());
    } else {
        for (double s : grid) {
            points.push_back(evaluate_point(rotated, stored.config, validate_sparsity(stored.config.d, s), stream,
                                            opt.max_tokens, tasks));
        }
    }
    std::sort(points.begin(), points.end(),
              [](const PointResult& a, const PointResult& b) { return a.record.s < b.record.s; });

    SweepReport report;
    const std::string blob = read_text_file(opt.model / kBlobName);
    report.model_id = "fnv1a64:" + hex64(fnv1a64(blob));
    for (auto& p : points) {
        report.records.push_back(std::move(p.record));
        report.d_kept.push_back(p.d_kept);
    }
    for (std::size_t i = 1; i < report.records.size(); ++i) {
        const auto& prev = report.records[i - 1].token_ppl;
        const auto& cur = report.records[i].token_ppl;
        if (prev && cur && *cur < *prev) report.ppl_non_decreasing = false;
    }
    if (!report.ppl_non_decreasing) warn("sweep: token perplexity is not non-decreasing in s");

    ordered_json j;
    j["model_id"] = report.model_id;
    j["mode"] = to_string(opt.mode);
    j["grid"] = grid;
    ordered_json records = ordered_json::array();
    for (std::size_t i = 0; i < report.records.size(); ++i) {
        const auto& r = report.records[i];
        ordered_json rec;
        rec["s"] = r.s;
        rec["d_kept"] = report.d_kept[i];
        rec["token_ppl"] = optional_number<ordered_json>(r.token_ppl);
        rec["log2_emb_ppl"] = optional_number<ordered_json>(r.log2_emb_ppl);
        ordered_json acc = ordered_json::object();
        ordered_json yacc = ordered_json::object();
        for (std::size_t t = 0; t < r.mc_acc.size(); ++t) {
            acc[r.mc_acc[t].first] = r.mc_acc[t].second;
            yacc[r.mc_acc[t].first] = optional_number<ordered_json>(derived_acc(report, r, t));
        }
        rec["accuracy"] = acc;
        rec["y_ppl"] = optional_number<ordered_json>(derived_ppl(report, r));
        rec["y_acc"] = yacc;
        records.push_back(rec);
    }
    j["records"] = records;
    j["token_ppl_non_decreasing"] = report.ppl_non_decreasing;

    ordered_json prov;
    prov["model_dir"] = opt.model.string();
    prov["corpus"] = {{"path", opt.corpus.string()},
                      {"fnv1a64", hex64(fnv1a64(corpus_text))},
                      {"max_tokens", opt.max_tokens}};
    const fs::path cal_corpus = opt.calibration.corpus.value_or(opt.corpus);
    prov["calibration"] = {{"corpus", cal_corpus.string()},
                           {"fnv1a64", hex64(fnv1a64(read_text_file(cal_corpus)))},
                           {"count", opt.calibration.count},
                           {"length", calibration.front().size()},
                           {"seed", opt.calibration.seed}};
    ordered_json task_list = ordered_json::array();
    for (std::size_t t = 0; t < opt.tasks.size(); ++t) {
        task_list.push_back({{"name", opt.tasks[t].name},
                             {"path", opt.tasks[t].path.string()},
                             {"fnv1a64", hex64(fnv1a64(read_text_file(opt.tasks[t].path)))},
                             {"items", tasks[t].second.size()}});
    }
    prov["tasks"] = task_list;
    ordered_json retained = ordered_json::array();
    for (std::size_t i = 0; i < report.records.size(); ++i) {
        ordered_json per_rotation = ordered_json::array();
        for (const auto& spectrum : rotated.plan.spectra) {
            per_rotation.push_back(retained_spectrum_fraction(spectrum, report.d_kept[i]));
        }
        retained.push_back(per_rotation);
    }
    prov["retained_spectrum_fraction"] = retained;
    j["provenance"] = prov;

    fs::path csv_path = opt.out, json_path = opt.out;
    csv_path += ".csv";
    json_path += ".json";
    write_file(csv_path, sweep_csv(report, opt.tasks));
    write_file(json_path, j.dump(2) + "\n");
    return report;
}

std::string sweep_csv(const SweepReport& report, const std::vector<TaskFile>& tasks) {
    std::string csv = "sparsity,token_ppl,log2_emb_ppl";
    for (const auto& t : tasks) csv += "," + t.name + "_acc";
    csv += ",y_ppl";
    for (const auto& t : tasks) csv += ",y_acc_" + t.name;
    csv += "\n";
    for (const auto& r : report.records) {
        csv += format_double(r.s) + "," + cell(r.token_ppl) + "," + cell(r.log2_emb_ppl);
        for (const auto& acc : r.mc_acc) csv += "," + format_double(acc.second);
        csv += "," + cell(derived_ppl(report, r));
        for (std::size_t t = 0; t < r.mc_acc.size(); ++t) csv += "," + cell(derived_acc(report, r, t));
        csv += "\n";
    }
    return csv;
}

// ---------------------------------------------------------------------------
// fit / predict

FitReport cmd_fit(const FitOptions& opt) {
    const auto rows = read_csv(opt.csv);
    if (rows.size() < 2 || rows.front().size() < 2) throw ValidationError("fit: " + fit_usage_hint());
    const auto& header = rows.front();
    auto column = [&](const std::vector<std::string>& names) -> std::optional<std::size_t> {
        for (const auto& n : names) {
            const auto it = std::find(header.begin(), header.end(), n);
            if (it != header.end()) return static_cast<std::size_t>(it - header.begin());
        }
        return std::nullopt;
    };
    const auto s_col = column({"sparsity", "s"});
    if (!s_col) throw ValidationError("fit: no sparsity column; " + fit_usage_hint());

    enum class Source { ppl, acc, pretransformed } source;
    std::optional<std::size_t> m_col;
    if (opt.metric == "ppl" || opt.metric == "token_ppl") {
        source = Source::ppl;
        m_col = column({"token_ppl"});
    } else if (opt.metric == "y") {
        source = Source::pretransformed;
        m_col = column({"y"});
    } else {
        source = Source::acc;
        const std::string name = opt.metric.ends_with("_acc") ? opt.metric : opt.metric + "_acc";
        m_col = column({name});
    }
    if (!m_col) throw ValidationError("fit: CSV has no column for metric '" + opt.metric + "'; " + fit_usage_hint());

    const PaperCoefficients* row = nullptr;
    if (opt.check) row = &paper_coefficients(opt.check->first, opt.check->second);

    std::string transform;
    if (source == Source::ppl) {
        transform = "ln_ppl_ratio";
    } else if (source == Source::acc) {
        transform = "ln_acc_ratio";
    } else if (opt.transform) {
        transform = *opt.transform;
    } else if (row) {
        transform = row->metric == MetricKind::perplexity ? "ln_ppl_ratio" : "ln_acc_ratio";
    } else {
        throw ValidationError("fit: --metric y needs --transform ln_ppl_ratio|ln_acc_ratio");
    }
    if (transform != "ln_ppl_ratio" && transform != "ln_acc_ratio") {
        throw ValidationError("fit: unknown transform '" + transform + "'");
    }
    if (row && (transform == "ln_ppl_ratio") != (row->metric == MetricKind::perplexity)) {
        throw ValidationError("fit: --check row is a " + to_string(row->metric) + " fit but the transform is " +
                              transform);
    }

    std::vector<std::pair<double, double>> raw;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const std::string where = opt.csv.string() + ":" + std::to_string(i + 1);
        if (r.size() != header.size()) throw ValidationError(where + ": expected " + std::to_string(header.size()) +
                                                             " cells, found " + std::to_string(r.size()));
        if (r[*m_col].empty()) continue;
        raw.emplace_back(parse_number(r[*s_col], where), parse_number(r[*m_col], where));
    }

    FitReport report;
    report.metric = opt.metric;
    report.transform = transform;
    if (source == Source::pretransformed) {
        for (const auto& [s, y] : raw) report.points.push_back(FitPoint{s, y});
    } else {
        const auto base = std::find_if(raw.begin(), raw.end(), [](const auto& p) { return p.first == 0.0; });
        if (base == raw.end()) {
            throw ValidationError("fit: no s=0 baseline row for '" + opt.metric +
                                  "'; the transform needs the unpruned value");
        }
        for (const auto& [s, v] : raw) {
            report.points.push_back(FitPoint{s, source == Source::ppl ? y_ppl(base->second, v) : y_acc(base->second, v)});
        }
    }
    if (report.points.size() < 2) throw ValidationError("fit: need at least 2 usable rows");
    report.fit = fit_line(report.points);

    ordered_json j;
    j["a"] = report.fit.a;
    j["b"] = report.fit.b;
    j["rmse"] = report.fit.rmse;
    j["n"] = report.fit.n_points;
    j["metric"] = report.metric;
    j["transform"] = report.transform;
    if (row) {
        report.matches_paper = matches_paper_fit(report.fit, *row);
        j["check"] = {{"model", row->model}, {"dataset", row->dataset}, {"a", row->a},
                      {"b", row->b},         {"rmse", row->rmse},       {"match", *report.matches_paper}};
    }
    report.json = j.dump(2) + "\n";
    if (opt.out) write_file(*opt.out, report.json);
    if (opt.plot) {
        std::vector<FitPoint> sorted = report.points;
        std::stable_sort(sorted.begin(), sorted.end(), [](const FitPoint& a, const FitPoint& b) { return a.s < b.s; });
        std::string csv = "s,y,fitted\n";
        for (const auto& p : sorted) {
            csv += format_double(p.s) + "," + format_double(p.y) + "," +
                   format_double(report.fit.a * p.s + report.fit.b) + "\n";
        }
        write_file(*opt.plot, csv);
    }
    return report;
}

PredictResult cmd_predict(const PredictOptions& opt) {
    if (opt.ppl0.has_value() == opt.acc0.has_value()) throw ValidationError("predict: give exactly one of --ppl0, --acc0");
    PredictResult result;
    ordered_json j;
    if (opt.ppl0) {
        if (opt.paper || opt.a || opt.b) throw ValidationError("predict: --paper, --a and --b apply to --acc0 only");
        result.value = predict_ppl(*opt.ppl0, opt.s);
        j["law"] = "ppl";
        j["ppl0"] = *opt.ppl0;
        j["s"] = opt.s;
        j["prediction"] = result.value;
    } else {
        double a = 0.0, b = 0.0;
        std::string source;
        if (opt.paper) {
            if (opt.a || opt.b) throw ValidationError("predict: use either --paper or --a/--b");
            const auto& row = paper_coefficients(opt.paper->first, opt.paper->second, MetricKind::accuracy);
            a = row.a;
            b = row.b;
            source = std::string(row.model) + "/" + row.dataset;
        } else if (opt.a && opt.b) {
            a = *opt.a;
            b = *opt.b;
            source = "flags";
        } else {
            throw ValidationError("predict: --acc0 needs --paper <model> <dataset> or both --a and --b");
        }
        const AccPrediction p = predict_acc(*opt.acc0, opt.s, a, b);
        result.value = p.value;
        result.above_one = p.above_one;
        if (p.above_one) warn("predict: extrapolated accuracy exceeds 1");
        j["law"] = "acc";
        j["acc0"] = *opt.acc0;
        j["s"] = opt.s;
        j["a"] = a;
        j["b"] = b;
        j["source"] = source;
        j["prediction"] = result.value;
        j["above_one"] = result.above_one;
    }
    result.json = j.dump(2) + "\n";
    if (opt.out) write_file(*opt.out, result.json);
    return result;
}

// ---------------------------------------------------------------------------
// entropy

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text) {
    const auto x = text.find('x');
    auto parse = [&](const std::string& part) -> std::size_t {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw ValidationError("shape '" + text + "' must look like 64x256");
        }
        return std::stoull(part);
    };
    if (x == std::string::npos) throw ValidationError("shape '" + text + "' must look like 64x256");
    const auto rows = parse(text.substr(0, x));
    const auto cols = parse(text.substr(x + 1));
    if (rows == 0 || cols == 0) throw ValidationError("shape '" + text + "' has a zero dimension");
    return {rows, cols};
}

EntropyTable cmd_entropy(const EntropyOptions& opt) {
    const int sources = int(opt.synthetic.has_value()) + int(opt.matrix_csv.has_value()) + int(opt.model.has_value());
    if (sources != 1) throw ValidationError("entropy: give exactly one of --synthetic, --matrix, --model");
    if (opt.model.has_value() != opt.corpus.has_value()) throw ValidationError("entropy: --model needs --corpus");

    std::optional<DenseMatrix> e;
    if (opt.synthetic) {
        SeededRng rng(opt.seed);
        e = random_gaussian(opt.synthetic->first, opt.synthetic->second, 1.0, rng);
    } else if (opt.matrix_csv) {
        const auto rows = read_csv(*opt.matrix_csv);
        if (rows.empty()) throw ValidationError("entropy: " + opt.matrix_csv->string() + " is empty");
        std::vector<double> values;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.front().size()) throw ValidationError("entropy: ragged matrix CSV");
            for (const auto& c : rows[i]) {
                values.push_back(parse_number(c, opt.matrix_csv->string() + ":" + std::to_string(i + 1)));
            }
        }
        e.emplace(rows.size(), rows.front().size(), std::move(values));
    } else {
        const StoredModel stored = load_model(*opt.model);
        const TokenSeq stream = encode_file(load_vocab(*opt.model), *opt.corpus);
        const std::size_t limit = opt.max_tokens == 0 ? stream.size() : std::min(opt.max_tokens, stream.size());
        std::vector<double> values;
        std::size_t n_rows = 0;
        for (std::size_t start = 0; start < limit; start += stored.config.max_seq_len) {
            const std::size_t len = std::min(stored.config.max_seq_len, limit - start);
            const auto trace =
                capture_trace(stored.weights, std::span<const TokenId>(stream).subspan(start, len), stored.config);
            values.insert(values.end(), trace.final_states.data().begin(), trace.final_states.data().end());
            n_rows += len;
        }
        if (n_rows == 0) throw ValidationError("entropy: corpus is empty");
        e.emplace(n_rows, stored.config.d, std::move(values));
    }
    if (!all_finite(e->data())) throw NumericalError("entropy: matrix has non-finite entries");

    EntropyTable table;
    table.csv = "s,ratio,expected,abs_error\n";
    for (double s : resolve_grid(opt.grid, e->cols())) {
        const SparsityLevel level = validate_sparsity(e->cols(), s);
        const double ratio = entropy_ratio(slice_cols(*e, 0, level.d_kept), *e);
        const EntropyRow row{s, ratio, 1.0 - s, std::abs(ratio - (1.0 - s))};
        table.rows.push_back(row);
        table.csv += format_double(row.s) + "," + format_double(row.ratio) + "," + format_double(row.expected) + "," +
                     format_double(row.abs_error) + "\n";
    }
    if (opt.out) write_file(*opt.out, table.csv);
    return table;
}

}  // namespace slicelab::cli
