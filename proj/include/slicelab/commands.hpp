// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the slicelab executable. Each command reads
// its inputs, writes its artifacts and returns the in-memory result so tests
// can drive it without a subprocess.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slicelab/metrics.hpp"
#include "slicelab/model_io.hpp"
#include "slicelab/scaling.hpp"
#include "slicelab/slicer.hpp"
#include "slicelab/trainer.hpp"
#include "slicelab/vocab.hpp"

namespace slicelab::cli {

namespace fs = std::filesystem;

/// 64-bit FNV-1a, used to fingerprint inputs in sweep provenance.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Shortest text that reads back as the same double ("%.17g").
std::string format_double(double v);

/// Sorted, de-duplicated grid; every entry must be admissible for `d`. An
/// empty grid means {0, 1/8, 1/4, 3/8, 1/2} restricted to admissible values.
std::vector<double> resolve_grid(std::vector<double> grid, std::size_t d);

struct TaskFile {
    std::string name;
    fs::path path;
};

/// "name=path", or a bare path named after its stem.
TaskFile parse_task_arg(const std::string& arg);

/// JSON lines with context, choices and gold; text is tokenized with `vocab`.
std::vector<McItem> load_mc_items(const fs::path& path, const Vocabulary& vocab);

struct InitOptions {
    std::size_t d = 64;
    std::size_t m = 256;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t kv_heads = 2;
    std::size_t blocks = 2;
    std::size_t vocab = 0;  // 0: size of the corpus vocabulary
    std::size_t max_seq_len = 64;
    std::uint64_t seed = 0;
    double init_std = 0.02;
    std::optional<fs::path> corpus;
    fs::path out;
};
ModelConfig cmd_init(const InitOptions& opt);

struct TrainOptions {
    fs::path model;
    fs::path corpus;
    fs::path out;
    std::optional<fs::path> loss_csv;
    TrainConfig train;
};
std::vector<double> cmd_train(const TrainOptions& opt);

struct CalibrationOptions {
    std::optional<fs::path> corpus;  // defaults to the evaluation corpus
    std::size_t count = 8;
    std::size_t length = 0;  // 0: max_seq_len
    std::uint64_t seed = 0;
};

struct SliceOptions {
    fs::path model;
    fs::path corpus;
    fs::path out;
    double s = 0.0;
    RotationMode mode = RotationMode::global;
    CalibrationOptions calibration;
};
SliceInfo cmd_slice(const SliceOptions& opt);

struct EvalOptions {
    fs::path model;
    std::optional<fs::path> corpus;
    std::vector<TaskFile> tasks;
    std::size_t max_tokens = 0;
    std::optional<fs::path> out;
};
struct EvalResult {
    std::optional<PplResult> ppl;
    std::vector<std::pair<std::string, double>> accuracy;
};
EvalResult cmd_eval(const EvalOptions& opt);
std::string to_json(const EvalResult& result);

struct SweepOptions {
    fs::path model;
    fs::path corpus;
    std::vector<TaskFile> tasks;
    std::vector<double> grid;
    RotationMode mode = RotationMode::global;
    CalibrationOptions calibration;
    std::size_t max_tokens = 0;
    bool parallel = true;
    fs::path out;  // writes <out>.csv and <out>.json
};
struct SweepReport {
    std::string model_id;
    std::vector<SweepRecord> records;  // ascending s
    std::vector<std::size_t> d_kept;
    bool ppl_non_decreasing = true;
};
SweepReport cmd_sweep(const SweepOptions& opt);
std::string sweep_csv(const SweepReport& report, const std::vector<TaskFile>& tasks);

struct FitOptions {
    fs::path csv;
    std::string metric = "ppl";  // "ppl", a task name, or "y" for pre-transformed pairs
    std::optional<std::string> transform;  // required with metric "y" unless --check names the row
    std::optional<std::pair<std::string, std::string>> check;
    std::optional<fs::path> out;
    std::optional<fs::path> plot;
};
struct FitReport {
    FitResult fit;
    std::string metric;
    std::string transform;
    std::vector<FitPoint> points;
    std::optional<bool> matches_paper;
    std::string json;
};
FitReport cmd_fit(const FitOptions& opt);

struct PredictOptions {
    std::optional<double> ppl0;
    std::optional<double> acc0;
    double s = 0.0;
    std::optional<std::pair<std::string, std::string>> paper;
    std::optional<double> a;
    std::optional<double> b;
    std::optional<fs::path> out;
};
struct PredictResult {
    double value = 0.0;
    bool above_one = false;
    std::string json;
};
PredictResult cmd_predict(const PredictOptions& opt);

struct EntropyOptions {
    std::optional<std::pair<std::size_t, std::size_t>> synthetic;  // rows x cols
    std::optional<fs::path> matrix_csv;
    std::optional<fs::path> model;
    std::optional<fs::path> corpus;
    std::vector<double> grid;
    std::uint64_t seed = 0;
    std::size_t max_tokens = 4096;
    std::optional<fs::path> out;
};
struct EntropyRow {
    double s;
    double ratio;
    double expected;
    double abs_error;
};
struct EntropyTable {
    std::vector<EntropyRow> rows;
    std::string csv;
};
EntropyTable cmd_entropy(const EntropyOptions& opt);

/// "RxC" as used by --synthetic.
std::pair<std::size_t, std::size_t> parse_shape(const std::string& text);

}  // namespace slicelab::cli
