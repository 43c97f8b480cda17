#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "tensor.hpp"

namespace cars {

/// Column mapping and preprocessing settings of one dataset.
struct DatasetSpec {
    std::string path;
    char delimiter = ',';
    std::string user_column = "user";
    std::string item_column = "item";
    std::optional<std::string> rating_column;
    std::optional<std::string> date_column;
    std::optional<std::string> amplitude_column;
    std::vector<std::string> context_columns;
    /// Append season and weekday features derived from the date column.
    bool date_contexts = false;
    /// Keep ratings ≥ threshold; unset keeps everything.
    std::optional<double> rating_threshold;
    std::size_t min_user_items = 3;
    std::size_t min_item_interactions = 0;
    /// Cell values treated as a missing context.
    std::vector<std::string> missing_markers{""};
};

/// One parsed CSV row.
struct InteractionRecord {
    std::string user;
    std::string item;
    std::vector<std::optional<std::string>> contexts;
    std::optional<double> rating;
    std::optional<std::string> date;
    double amplitude = 1.0;
    std::size_t line = 0;
};

namespace detail {

inline double parse_number(const std::string& s, const char* what, std::size_t line) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') ++b;
    while (e > b && e[-1] == ' ') --e;
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || b == e)
        throw ParseError(std::string("unparsable ") + what + " '" + s + "'", line);
    return v;
}

} // namespace detail

inline std::vector<InteractionRecord> load_interactions_csv(std::istream& in, const DatasetSpec& spec) {
    CsvReader reader(in, spec.delimiter);
    std::vector<std::string> header;
    if (!reader.next(header)) throw ParseError("empty file (no header row)", 1);
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ParseError("missing column '" + name + "'", 1);
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto user_col = column(spec.user_column);
    const auto item_col = column(spec.item_column);
    std::optional<std::size_t> rating_col, date_col, amp_col;
    if (spec.rating_column) rating_col = column(*spec.rating_column);
    if (spec.date_column) date_col = column(*spec.date_column);
    if (spec.amplitude_column) amp_col = column(*spec.amplitude_column);
    std::vector<std::size_t> ctx_cols;
    for (const auto& c : spec.context_columns) ctx_cols.push_back(column(c));

    std::vector<InteractionRecord> out;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        const auto line = reader.line();
        if (fields.size() == 1 && fields[0].empty()) continue; // blank line
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line);
        InteractionRecord r;
        r.line = line;
        r.user = fields[user_col];
        r.item = fields[item_col];
        if (r.user.empty() || r.item.empty()) throw ParseError("empty user or item id", line);
        if (rating_col) r.rating = detail::parse_number(fields[*rating_col], "rating", line);
        if (date_col) r.date = fields[*date_col];
        if (amp_col) {
            r.amplitude = detail::parse_number(fields[*amp_col], "amplitude", line);
            if (r.amplitude < 0.0) throw ParseError("negative amplitude", line);
        }
        for (auto c : ctx_cols) {
            const auto& v = fields[c];
            if (std::find(spec.missing_markers.begin(), spec.missing_markers.end(), v) != spec.missing_markers.end())
                r.contexts.emplace_back(std::nullopt);
            else
                r.contexts.emplace_back(v);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<InteractionRecord> load_interactions_csv(const DatasetSpec& spec) {
    std::ifstream in(spec.path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + spec.path + "'", 0);
    return load_interactions_csv(in, spec);
}

/// Keeps records rated at or above the threshold; no threshold keeps all.
inline std::vector<InteractionRecord> binarize(std::vector<InteractionRecord> records,
                                               std::optional<double> threshold = 3.0) {
    if (!threshold) return records;
    std::vector<InteractionRecord> out;
    out.reserve(records.size());
    for (auto& r : records) {
        if (!r.rating) throw ParseError("binarize: record has no rating", r.line);
        if (*r.rating >= *threshold) out.push_back(std::move(r));
    }
    return out;
}

/// Alternates the item filter (≥ min_item_interactions rows) and the user
/// filter (≥ min_user_items distinct items) until neither removes anything.
inline std::vector<InteractionRecord> filter_core(std::vector<InteractionRecord> records,
                                                  std::size_t min_user_items = 3,
                                                  std::size_t min_item_interactions = 0) {
    for (;;) {
        const auto before = records.size();
        if (min_item_interactions > 0) {
            std::unordered_map<std::string, std::size_t> count;
            for (const auto& r : records) ++count[r.item];
            std::erase_if(records, [&](const auto& r) { return count[r.item] < min_item_interactions; });
        }
        if (min_user_items > 0) {
            std::unordered_map<std::string, std::set<std::string>> items;
            for (const auto& r : records) items[r.user].insert(r.item);
            std::erase_if(records, [&](const auto& r) { return items[r.user].size() < min_user_items; });
        }
        if (records.size() == before) return records;
    }
}

enum class Season { WINTER, SPRING, SUMMER, AUTUMN };

inline const std::vector<std::string> kSeasonLabels{"winter", "spring", "summer", "autumn"};
inline const std::vector<std::string> kWeekdayLabels{"monday", "tuesday", "wednesday", "thursday",
                                                     "friday", "saturday", "sunday"};

struct DateContext {
    Season season;
    /// ISO weekday index: 0 = Monday … 6 = Sunday.
    int weekday;
};

/// Meteorological season (Dec–Feb winter, …) and ISO weekday of a date.
inline DateContext date_contexts(const std::chrono::year_month_day& date) {
    if (!date.ok()) throw std::invalid_argument("date_contexts: invalid date");
    const unsigned month = static_cast<unsigned>(date.month());
    const Season season = month == 12 || month <= 2 ? Season::WINTER
                          : month <= 5              ? Season::SPRING
                          : month <= 8              ? Season::SUMMER
                                                    : Season::AUTUMN;
    const std::chrono::weekday wd{std::chrono::sys_days{date}};
    return {season, static_cast<int>(wd.iso_encoding()) - 1};
}

/// Parses the leading YYYY-MM-DD of a date or timestamp string.
inline std::chrono::year_month_day parse_date(const std::string& s, std::size_t line = 0) {
    int y = 0;
    unsigned m = 0, d = 0;
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw ParseError("unparsable date '" + s + "'", line);
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        if (ec != std::errc() || p != s.data() + pos + len) throw ParseError("unparsable date '" + s + "'", line);
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw ParseError("invalid calendar date '" + s + "'", line);
    return ymd;
}

/// Builds the context schema (values sorted per feature; fixed vocabularies
/// for date-derived season and weekday) and the interaction tensor.
inline InteractionTensor encode(const std::vector<InteractionRecord>& records, const DatasetSpec& spec) {
    const std::size_t plain = spec.context_columns.size();
    std::vector<std::set<std::string>> vocab(plain);
    std::vector<bool> has_missing(plain, false);
    for (const auto& r : records)
        for (std::size_t f = 0; f < plain; ++f) {
            if (r.contexts[f])
                vocab[f].insert(*r.contexts[f]);
            else
                has_missing[f] = true;
        }

    std::vector<ContextFeature> features;
    for (std::size_t f = 0; f < plain; ++f) {
        ContextFeature feat{spec.context_columns[f], vocab[f].size(), has_missing[f],
                            {vocab[f].begin(), vocab[f].end()}};
        if (feat.cardinality == 0) throw SchemaError("context column '" + feat.name + "' has no recorded values");
        features.push_back(std::move(feat));
    }
    if (spec.date_contexts) {
        if (!spec.date_column) throw ConfigError("date_contexts requires a date column");
        features.push_back({"season", 4, false, kSeasonLabels});
        features.push_back({"weekday", 7, false, kWeekdayLabels});
    }

    std::vector<RawRecord> raw;
    raw.reserve(records.size());
    for (const auto& r : records) {
        RawRecord rr{r.user, r.item, {}, r.amplitude};
        for (std::size_t f = 0; f < plain; ++f) {
            if (!r.contexts[f]) {
                rr.ctx.push_back(kMissing);
                continue;
            }
            auto it = vocab[f].find(*r.contexts[f]);
            rr.ctx.push_back(static_cast<std::int32_t>(std::distance(vocab[f].begin(), it)));
        }
        if (spec.date_contexts) {
            if (!r.date) throw ParseError("missing date", r.line);
            const auto dc = date_contexts(parse_date(*r.date, r.line));
            rr.ctx.push_back(static_cast<std::int32_t>(dc.season));
            rr.ctx.push_back(dc.weekday);
        }
        raw.push_back(std::move(rr));
    }
    return build_tensor(raw, ContextSchema(std::move(features)));
}

/// load → binarize → filter_core → encode.
inline InteractionTensor preprocess(const DatasetSpec& spec) {
    auto records = load_interactions_csv(spec);
    std::optional<double> threshold = spec.rating_threshold;
    if (!threshold && spec.rating_column) threshold = 3.0;
    records = binarize(std::move(records), spec.rating_column ? threshold : std::nullopt);
    records = filter_core(std::move(records), spec.min_user_items, spec.min_item_interactions);
    return encode(records, spec);
}

/// Canonical interaction file: user,item,ctx_<name>...,amplitude with dense
/// indices (missing contexts as empty cells) plus a JSON sidecar holding
/// the schema and the index → id maps.
inline void write_canonical(const InteractionTensor& t, std::ostream& csv, std::ostream& sidecar) {
    csv << "user,item";
    for (const auto& f : t.schema().features()) csv << ",ctx_" << f.name;
    csv << ",amplitude\n";
    char buf[64];
    for (const auto& e : t.entries()) {
        csv << e.user << ',' << e.item;
        for (auto v : e.ctx) {
            csv << ',';
            if (v != kMissing) csv << v;
        }
        std::snprintf(buf, sizeof buf, "%.17g", e.amplitude);
        csv << ',' << buf << '\n';
    }

    nlohmann::json features = nlohmann::json::array();
    for (const auto& f : t.schema().features())
        features.push_back({{"name", f.name},
                            {"cardinality", f.cardinality},
                            {"allows_missing", f.allows_missing},
                            {"labels", f.labels}});
    nlohmann::json j{{"users", t.users()},
                     {"items", t.items()},
                     {"interactions", t.size()},
                     {"features", features},
                     {"user_ids", t.user_ids()},
                     {"item_ids", t.item_ids()}};
    sidecar << j.dump(2) << '\n';
}

inline InteractionTensor read_canonical(std::istream& csv, std::istream& sidecar) {
    nlohmann::json j;
    try {
        sidecar >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("schema sidecar: ") + ex.what(), 0);
    }
    std::vector<ContextFeature> features;
    for (const auto& f : j.at("features"))
        features.push_back({f.at("name").get<std::string>(), f.at("cardinality").get<std::size_t>(),
                            f.at("allows_missing").get<bool>(), f.value("labels", std::vector<std::string>{})});
    ContextSchema schema(std::move(features));
    const auto m = j.at("users").get<std::size_t>();
    const auto n = j.at("items").get<std::size_t>();

    CsvReader reader(csv);
    std::vector<std::string> fields;
    if (!reader.next(fields)) throw ParseError("canonical file: missing header", 1);
    const std::size_t expected = 3 + schema.size();
    if (fields.size() != expected) throw ParseError("canonical file: header does not match schema", 1);
    std::vector<TensorEntry> entries;
    while (reader.next(fields)) {
        const auto line = reader.line();
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != expected) throw ParseError("canonical file: wrong field count", line);
        TensorEntry e;
        e.user = static_cast<std::uint32_t>(detail::parse_number(fields[0], "user index", line));
        e.item = static_cast<std::uint32_t>(detail::parse_number(fields[1], "item index", line));
        for (std::size_t f = 0; f < schema.size(); ++f)
            e.ctx.push_back(fields[2 + f].empty()
                                ? kMissing
                                : static_cast<std::int32_t>(detail::parse_number(fields[2 + f], "context", line)));
        e.amplitude = detail::parse_number(fields.back(), "amplitude", line);
        entries.push_back(std::move(e));
    }
    return InteractionTensor(m, n, std::move(schema), std::move(entries),
                             j.value("user_ids", std::vector<std::string>{}),
                             j.value("item_ids", std::vector<std::string>{}));
}

} // namespace cars
