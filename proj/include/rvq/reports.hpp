#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "rvq/analysis.hpp"
#include "rvq/errors.hpp"
#include "rvq/training.hpp"

namespace rvq {

/// Shortest round-trip decimal form of a double, for CSV cells.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // Trim to the shortest representation that still parses back exactly.
    for (int prec = 1; prec < 17; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

inline nlohmann::json train_report_to_json(const TrainReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["update_scope"] = report.update_scope;
    j["steps"] = report.loss_trace.size();
    j["diverged"] = report.diverged;
    if (report.diverged) j["divergence_step"] = report.divergence_step;
    j["final_loss"] = report.loss_trace.empty() ? nlohmann::json() : nlohmann::json(report.loss_trace.back());
    j["per_stage_mse"] = report.per_stage_mse;
    j["usage_entropy_bits"] = report.usage_entropy;
    j["reseed_total"] = report.reseed_total;
    nlohmann::json phases = nlohmann::json::array();
    for (const PhaseLog& p : report.phases)
        phases.push_back({{"stage", p.stage},
                          {"steps", p.steps},
                          {"final_loss", p.final_loss},
                          {"eval_mse", p.eval_mse}});
    j["phases"] = phases;
    j["stage_trace"] = report.stage_trace;
    return j;
}

/// One row per fine-tuning phase, in schedule order: the per-stage metric
/// trend as the perturbation moves through the cascade.
inline void write_phase_metrics_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "stage,final_loss,eval_mse\n";
    for (const PhaseLog& p : report.phases)
        out << p.stage << "," << format_double(p.final_loss) << "," << format_double(p.eval_mse)
            << "\n";
    if (!out) throw IoError("short write to " + path);
}

inline void write_loss_trace_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "step,loss,perturbed_stage\n";
    for (std::size_t i = 0; i < report.loss_trace.size(); ++i) {
        int stage = i < report.stage_trace.size() ? report.stage_trace[i] : 0;
        out << i << "," << format_double(report.loss_trace[i]) << "," << stage << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

/// CSV layout matches the shift histogram figures: one row per shift value,
/// dense from 0 to the largest observed shift, then an `overflow` row.
inline void write_shift_histogram_csv(const ShiftHistogram& h, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "shift,count\n";
    int max_shift = -1;
    for (const auto& [shift, count] : h.counts) max_shift = std::max(max_shift, shift);
    for (int s = 0; s <= max_shift; ++s) out << s << "," << h.count_at(s) << "\n";
    out << "overflow," << h.overflow << "\n";
    if (!out) throw IoError("short write to " + path);
}

inline nlohmann::json shift_histogram_to_json(const ShiftHistogram& h) {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [shift, count] : h.counts) counts[std::to_string(shift)] = count;
    return {{"k_max", h.k_max}, {"total", h.total}, {"overflow", h.overflow}, {"counts", counts}};
}

} // namespace rvq
