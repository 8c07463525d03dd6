// SPDX-License-Identifier: Apache-2.0
//
// Sparsity -> performance laws. Perplexity follows
//     ln PPL0 / ln PPL = 1 - s
// and multiple-choice accuracy follows ln(acc / acc0) = a * s + b with fitted
// (a, b). Both transforms are fitted as straight lines y = a * s + b.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace slicelab {

struct SweepRecord {
    double s = 0.0;
    std::optional<double> token_ppl;
    std::vector<std::pair<std::string, double>> mc_acc;  // task name -> accuracy, in task order
    std::optional<double> log2_emb_ppl;
};

struct FitPoint {
    double s;
    double y;
};

struct FitResult {
    double a = 0.0;
    double b = 0.0;
    double rmse = 0.0;  // sqrt(mean squared residual), divided by n
    std::size_t n_points = 0;
};

enum class MetricKind { perplexity, accuracy };

struct PaperCoefficients {
    const char* model;
    const char* dataset;
    MetricKind metric;
    double a;
    double b;
    double rmse;
};

struct AccPrediction {
    double value = 0.0;
    bool above_one = false;  // the law extrapolated past a valid accuracy
};

/// ln(ppl0) / ln(ppl); both must exceed 1.
double y_ppl(double ppl0, double ppl);
/// ln(acc / acc0); both must be positive.
double y_acc(double acc0, double acc);

/// Ordinary least squares. Needs >= 2 points and two distinct abscissas.
FitResult fit_line(std::span<const FitPoint> points);

/// exp(ln(ppl0) / (1 - s)).
double predict_ppl(double ppl0, double s);
/// acc0 * exp(a * s + b), flagged when above 1.
AccPrediction predict_acc(double acc0, double s, double a, double b);

/// All ten published fits, perplexity rows first.
std::span<const PaperCoefficients> paper_table();
/// Case- and punctuation-insensitive lookup; "llama3" / "phi3" are accepted
/// as model aliases. Unknown keys raise ValidationError listing the table.
const PaperCoefficients& paper_coefficients(const std::string& model, const std::string& dataset,
                                            MetricKind metric);
/// Metric is implied by the dataset (WikiText2 is perplexity, the rest accuracy).
const PaperCoefficients& paper_coefficients(const std::string& model, const std::string& dataset);

/// True when the refit slope and intercept both lie within the published RMSE.
bool matches_paper_fit(const FitResult& fit, const PaperCoefficients& row);

std::string to_string(MetricKind kind);

}  // namespace slicelab
