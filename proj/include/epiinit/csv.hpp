#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "epiinit/simulate.hpp"
#include "epiinit/study.hpp"
#include "epiinit/types.hpp"

namespace epiinit {

/// Shortest round-trip-stable decimal representation (locale-independent).
inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string format_count(long long v) { return std::to_string(v); }

/// One row of a county-wise cumulative incidence table.
struct IncidenceRecord {
    std::string date;
    std::string county;
    long long cumulative_cases = 0;
};

/// Ingested incidence data: one measurement series per county, daily sampled
/// from the selected start date.
struct IncidenceData {
    std::vector<std::string> dates;                       // dates from day 0 on
    std::map<std::string, MeasurementSeries> by_county;   // noise-free series
    int day0_offset = 0;                                  // rows skipped by the threshold rule
};

namespace detail {

inline int days_from_civil(int y, int mo, int dy) {
    // Howard Hinnant's algorithm; fine for the Gregorian dates handled here.
    y -= mo <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + dy - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int>(doe) - 719468;
}

inline int parse_iso_date(const std::string& text, size_t line) {
    int y = 0, mo = 0, dy = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%d-%d-%d%c", &y, &mo, &dy, &extra) != 3 || mo < 1 || mo > 12 ||
        dy < 1 || dy > 31)
        throw DataFormatError("line " + std::to_string(line) + ": invalid ISO date '" + text + "'");
    return days_from_civil(y, mo, dy);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace detail

/**
 * Reads a `date,county,cumulative_cases` CSV, validates per-county
 * monotonicity and daily coverage, and converts it into per-county
 * measurement series. With threshold > 0, day 0 is the first date on which the
 * national total reaches the threshold; otherwise the first date in the file.
 */
inline IncidenceData ingest_incidence(std::istream& in, long threshold = 0) {
    std::string header;
    if (!std::getline(in, header)) throw DataFormatError("empty incidence file");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != "date,county,cumulative_cases")
        throw DataFormatError("expected header 'date,county,cumulative_cases', got '" + header + "'");

    struct Row {
        int day;
        std::string date;
        long long cases;
    };
    std::map<std::string, std::vector<Row>> rows;
    std::map<int, std::string> date_names;
    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw DataFormatError("line " + std::to_string(line_no) + ": expected 3 fields, got " +
                                  std::to_string(fields.size()));
        const int day = detail::parse_iso_date(fields[0], line_no);
        if (fields[1].empty())
            throw DataFormatError("line " + std::to_string(line_no) + ": empty county name");
        char* end = nullptr;
        const long long cases = std::strtoll(fields[2].c_str(), &end, 10);
        if (end == fields[2].c_str() || *end != '\0' || cases < 0)
            throw DataFormatError("line " + std::to_string(line_no) +
                                  ": invalid cumulative case count '" + fields[2] + "'");
        auto& county_rows = rows[fields[1]];
        if (!county_rows.empty() && county_rows.back().day == day)
            throw DataFormatError("duplicate date " + fields[0] + " for county " + fields[1]);
        county_rows.push_back(Row{day, fields[0], cases});
        date_names[day] = fields[0];
    }
    if (rows.empty()) throw DataFormatError("incidence file holds no data rows");

    const int first_day = date_names.begin()->first;
    const int last_day = date_names.rbegin()->first;
    const int span = last_day - first_day + 1;
    if (static_cast<int>(date_names.size()) != span)
        throw DataFormatError("incidence dates are not consecutive days");

    for (auto& [county, county_rows] : rows) {
        std::sort(county_rows.begin(), county_rows.end(),
                  [](const Row& a, const Row& b) { return a.day < b.day; });
        if (static_cast<int>(county_rows.size()) != span)
            throw DataFormatError("county " + county + " is missing dates (has " +
                                  std::to_string(county_rows.size()) + " of " +
                                  std::to_string(span) + ")");
        for (size_t i = 1; i < county_rows.size(); ++i)
            if (county_rows[i].cases < county_rows[i - 1].cases)
                throw DataFormatError("cumulative cases decrease for county " + county + " on " +
                                      county_rows[i].date);
    }

    int day0 = 0;
    if (threshold > 0) {
        day0 = -1;
        for (int offset = 0; offset < span; ++offset) {
            long long total = 0;
            for (const auto& [county, county_rows] : rows) total += county_rows[offset].cases;
            if (total >= threshold) {
                day0 = offset;
                break;
            }
        }
        if (day0 < 0)
            throw DataFormatError("national total never reaches the threshold " +
                                  std::to_string(threshold));
    }

    IncidenceData data;
    data.day0_offset = day0;
    for (int offset = day0; offset < span; ++offset)
        data.dates.push_back(date_names.at(first_day + offset));
    for (const auto& [county, county_rows] : rows) {
        MeasurementSeries series;
        series.r = 0.0;
        for (int offset = day0; offset < span; ++offset)
            series.y.push_back(static_cast<double>(county_rows[offset].cases));
        data.by_county.emplace(county, std::move(series));
    }
    return data;
}

inline IncidenceData ingest_incidence_file(const std::string& path, long threshold = 0) {
    std::ifstream in(path);
    if (!in) throw DataFormatError("cannot open incidence file '" + path + "'");
    return ingest_incidence(in, threshold);
}

/// Writes a measurement series back out in the incidence format.
inline void export_incidence(std::ostream& out, const std::string& county,
                             const std::vector<std::string>& dates, const MeasurementSeries& series) {
    out << "date,county,cumulative_cases\n";
    for (size_t k = 0; k < series.y.size(); ++k)
        out << dates[k] << ',' << county << ',' << format_count(std::llround(series.y[k])) << '\n';
}

inline void export_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories) {
    out << "realization,k,I_c,I,A,E,phi\n";
    for (size_t r = 0; r < trajectories.size(); ++r)
        for (size_t k = 0; k < trajectories[r].states.size(); ++k) {
            const Vec5& x = trajectories[r].states[k];
            out << r << ',' << k;
            for (int s = 0; s < kStateDim; ++s) out << ',' << format_number(x[s]);
            out << '\n';
        }
}

/// Table-style export of smoothed estimates: counts are clamped at zero and
/// rounded to integers; the infectious pressure is reported clamped.
inline void export_estimates(std::ostream& out,
                             const std::vector<std::pair<std::string, SmoothedEstimate>>& rows) {
    out << "county,method,I,E,A,I_c,phi,converged,iterations\n";
    for (const auto& [county, est] : rows) {
        auto count = [&](int s) { return format_count(std::llround(std::max(0.0, est.x[s]))); };
        out << county << ',' << method_name(est.method) << ',' << count(kInfected) << ','
            << count(kExposed) << ',' << count(kAsymptomatic) << ',' << count(kCumIncidence) << ','
            << format_number(std::max(0.0, est.x[kPressure])) << ','
            << (est.converged ? 1 : 0) << ',' << est.iterations << '\n';
    }
}

inline void export_kdes(std::ostream& out,
                        const std::vector<std::tuple<std::string, std::string, std::string, const KdeCurve*>>& curves) {
    out << "study,method,state,grid,density\n";
    for (const auto& [study, method, state, curve] : curves) {
        if (!curve) continue;
        for (size_t i = 0; i < curve->grid.size(); ++i)
            out << study << ',' << method << ',' << state << ',' << format_number(curve->grid[i])
                << ',' << format_number(curve->density[i]) << '\n';
    }
}

inline void export_study_summary(std::ostream& out, const StudyResult& result) {
    out << "method,state,mean_err,std_err,mae,n_failed\n";
    for (const StudySummaryRow& row : result.summary)
        out << method_name(row.method) << ',' << kStateNames[row.state_index] << ','
            << format_number(row.mean_err) << ',' << format_number(row.std_err) << ','
            << format_number(row.mae) << ',' << row.n_failed << '\n';
}

/// Minimal SVG polyline rendering of KDE curves (one file per call).
inline void export_kde_svg(std::ostream& out,
                           const std::vector<std::pair<std::string, const KdeCurve*>>& curves,
                           int width = 640, int height = 400) {
    double x_lo = 1e300, x_hi = -1e300, y_hi = 0.0;
    for (const auto& [label, curve] : curves) {
        if (!curve || curve->grid.empty()) continue;
        x_lo = std::min(x_lo, curve->grid.front());
        x_hi = std::max(x_hi, curve->grid.back());
        for (double v : curve->density) y_hi = std::max(y_hi, v);
    }
    if (!(x_hi > x_lo) || y_hi <= 0.0) {
        out << "<svg xmlns='http://www.w3.org/2000/svg'/>\n";
        return;
    }
    const char* colors[] = {"#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400"};
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << ' ' << height << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    const int margin = 30;
    int color_index = 0;
    for (const auto& [label, curve] : curves) {
        if (!curve || curve->grid.empty()) continue;
        out << "<polyline fill='none' stroke='" << colors[color_index % 5]
            << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < curve->grid.size(); ++i) {
            const double px = margin + (curve->grid[i] - x_lo) / (x_hi - x_lo) * (width - 2 * margin);
            const double py = height - margin - curve->density[i] / y_hi * (height - 2 * margin);
            out << format_number(px) << ',' << format_number(py) << ' ';
        }
        out << "'/>\n";
        out << "<text x='" << (margin + 6) << "' y='" << (margin + 14 + 14 * color_index)
            << "' fill='" << colors[color_index % 5] << "' font-size='12'>" << label << "</text>\n";
        ++color_index;
    }
    out << "</svg>\n";
}

}  // namespace epiinit
