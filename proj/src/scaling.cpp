// SPDX-License-Identifier: Apache-2.0
#include "slicelab/scaling.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "slicelab/error.hpp"

namespace slicelab {
namespace {

constexpr const char* kLlama = "Llama-3-8B-Instruct";
constexpr const char* kPhi = "Phi-3-mini-4k-Instruct";

constexpr std::array<PaperCoefficients, 10> kPaperTable{{
    {kLlama, "WikiText2", MetricKind::perplexity, -1.08, 0.96, 0.03},
    {kPhi, "WikiText2", MetricKind::perplexity, -0.90, 1.02, 0.01},
    {kLlama, "ARC-e", MetricKind::accuracy, -2.14, 0.04, 0.05},
    {kPhi, "ARC-e", MetricKind::accuracy, -1.84, 0.04, 0.04},
    {kLlama, "ARC-c", MetricKind::accuracy, -2.02, -0.07, 0.09},
    {kPhi, "ARC-c", MetricKind::accuracy, -1.88, -0.01, 0.02},
    {kLlama, "WinoGrande", MetricKind::accuracy, -0.86, -0.02, 0.02},
    {kPhi, "WinoGrande", MetricKind::accuracy, -0.66, -0.02, 0.02},
    {kLlama, "PIQA", MetricKind::accuracy, -0.91, -0.01, 0.03},
    {kPhi, "PIQA", MetricKind::accuracy, -0.90, 0.01, 0.01},
}};

std::string normalize_key(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string canonical_model(const std::string& model) {
    const std::string key = normalize_key(model);
    if (key == "llama3" || key == "llama38b" || key == normalize_key(kLlama)) return normalize_key(kLlama);
    if (key == "phi3" || key == "phi3mini" || key == normalize_key(kPhi)) return normalize_key(kPhi);
    return key;
}

std::string available_keys() {
    std::string out;
    for (const auto& row : kPaperTable) {
        if (!out.empty()) out += ", ";
        out += std::string(row.model) + "/" + row.dataset + "/" + to_string(row.metric);
    }
    return out;
}

}  // namespace

std::string to_string(MetricKind kind) { return kind == MetricKind::perplexity ? "perplexity" : "accuracy"; }

double y_ppl(double ppl0, double ppl) {
    if (!(ppl0 > 1.0) || !(ppl > 1.0)) {
        throw ValidationError("y_ppl: perplexities must exceed 1 (got ppl0 = " + std::to_string(ppl0) +
                              ", ppl = " + std::to_string(ppl) + ")");
    }
    return std::log(ppl0) / std::log(ppl);
}

double y_acc(double acc0, double acc) {
    if (!(acc0 > 0.0) || !(acc > 0.0)) {
        throw ValidationError("y_acc: accuracies must be positive (got acc0 = " + std::to_string(acc0) +
                              ", acc = " + std::to_string(acc) + ")");
    }
    return std::log(acc / acc0);
}

FitResult fit_line(std::span<const FitPoint> points) {
    if (points.size() < 2) throw ValidationError("fit_line: need at least 2 points");
    // Canonical order makes the result independent of input order.
    std::vector<FitPoint> sorted(points.begin(), points.end());
    std::sort(sorted.begin(), sorted.end(), [](const FitPoint& p, const FitPoint& q) {
        return p.s != q.s ? p.s < q.s : p.y < q.y;
    });

    const double n = static_cast<double>(sorted.size());
    double s_mean = 0.0, y_mean = 0.0;
    for (const auto& p : sorted) {
        s_mean += p.s;
        y_mean += p.y;
    }
    s_mean /= n;
    y_mean /= n;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& p : sorted) {
        sxx += (p.s - s_mean) * (p.s - s_mean);
        sxy += (p.s - s_mean) * (p.y - y_mean);
    }
    if (!(sxx > 0.0)) throw ValidationError("fit_line: all sparsity values are equal, slope is undefined");

    FitResult fit;
    fit.a = sxy / sxx;
    fit.b = y_mean - fit.a * s_mean;
    fit.n_points = sorted.size();
    if (sorted.size() == 2) {
        fit.rmse = 0.0;  // two distinct abscissas are interpolated exactly
        return fit;
    }
    double sse = 0.0;
    for (const auto& p : sorted) {
        const double r = p.y - (fit.a * p.s + fit.b);
        sse += r * r;
    }
    fit.rmse = std::sqrt(sse / n);
    return fit;
}

double predict_ppl(double ppl0, double s) {
    if (!(ppl0 > 1.0)) throw ValidationError("predict_ppl: ppl0 must exceed 1");
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("predict_ppl: s must lie in [0, 1), got " + std::to_string(s));
    const double ppl = std::exp(std::log(ppl0) / (1.0 - s));
    if (!std::isfinite(ppl)) throw NumericalError("predict_ppl: prediction overflows a double");
    return ppl;
}

AccPrediction predict_acc(double acc0, double s, double a, double b) {
    if (!(acc0 > 0.0 && acc0 <= 1.0)) throw ValidationError("predict_acc: acc0 must lie in (0, 1]");
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("predict_acc: s must lie in [0, 1), got " + std::to_string(s));
    const double value = acc0 * std::exp(a * s + b);
    return AccPrediction{value, value > 1.0};
}

std::span<const PaperCoefficients> paper_table() { return kPaperTable; }

const PaperCoefficients& paper_coefficients(const std::string& model, const std::string& dataset,
                                            MetricKind metric) {
    const std::string m = canonical_model(model);
    const std::string d = normalize_key(dataset);
    for (const auto& row : kPaperTable) {
        if (normalize_key(row.model) == m && normalize_key(row.dataset) == d && row.metric == metric) return row;
    }
    throw ValidationError("no published fit for " + model + "/" + dataset + "/" + to_string(metric) +
                          "; available: " + available_keys());
}

const PaperCoefficients& paper_coefficients(const std::string& model, const std::string& dataset) {
    const MetricKind kind =
        normalize_key(dataset) == "wikitext2" ? MetricKind::perplexity : MetricKind::accuracy;
    return paper_coefficients(model, dataset, kind);
}

bool matches_paper_fit(const FitResult& fit, const PaperCoefficients& row) {
    return std::abs(fit.a - row.a) <= row.rmse && std::abs(fit.b - row.b) <= row.rmse;
}

}  // namespace slicelab
