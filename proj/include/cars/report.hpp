#pragma once

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "eval.hpp"

namespace cars {

namespace detail {
inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}
} // namespace detail

/// Long-format table: one row per (metric, cutoff, statistic).
///   metric  k  stat  value
inline void write_tsv(std::ostream& out, const EvalReport& report) {
    out << "metric\tk\tstat\tvalue\n";
    for (const auto& r : report.rows) {
        out << to_string(r.metric) << '\t' << r.k << "\tmean\t" << detail::fixed6(r.mean) << '\n';
        out << to_string(r.metric) << '\t' << r.k << "\tstd\t" << detail::fixed6(r.std) << '\n';
    }
}

/// As write_tsv with an extra column holding 100·value/reference for the
/// mean rows (empty for std rows or when the reference lacks the metric).
inline void write_tsv_with_reference(std::ostream& out, const EvalReport& report, const EvalReport& reference) {
    out << "metric\tk\tstat\tvalue\tpercent_of_reference\n";
    for (const auto& r : report.rows) {
        std::string pct;
        for (const auto& ref : reference.rows)
            if (ref.metric == r.metric && ref.k == r.k && ref.mean != 0.0)
                pct = detail::fixed6(100.0 * r.mean / ref.mean);
        out << to_string(r.metric) << '\t' << r.k << "\tmean\t" << detail::fixed6(r.mean) << '\t' << pct << '\n';
        out << to_string(r.metric) << '\t' << r.k << "\tstd\t" << detail::fixed6(r.std) << "\t\n";
    }
}

inline nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"metric", std::string(to_string(r.metric))},
                        {"k", r.k},
                        {"mean", r.mean},
                        {"std", r.std},
                        {"values", r.values}});
    return {{"repetitions", report.repetitions}, {"metrics", rows}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.repetitions = j.at("repetitions").get<std::size_t>();
    for (const auto& r : j.at("metrics")) {
        MetricRow row;
        row.metric = parse_metric(r.at("metric").get<std::string>());
        row.k = r.at("k").get<std::size_t>();
        row.mean = r.at("mean").get<double>();
        row.std = r.at("std").get<double>();
        row.values = r.at("values").get<std::vector<double>>();
        report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace cars
