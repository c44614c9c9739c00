#include "fibro/clinical.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "fibro/error.hpp"

namespace fibro {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <class T>
T parse_number(const std::string& s, const std::string& what, std::size_t line_no) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
    }
    return v;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::vector<PatientRecord> load_clinical_csv(const std::filesystem::path& path,
                                             const std::filesystem::path& ct_root) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open clinical file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kClinicalHeader) {
        throw DataError(path.string() + ": header must be '" + std::string(kClinicalHeader) + "'");
    }
    std::vector<PatientRecord> records;
    std::map<std::string, std::size_t> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected 7 fields, got " +
                            std::to_string(f.size()));
        }
        if (f[0].empty()) throw DataError(path.string() + " line " + std::to_string(line_no) + ": empty patient id");
        const int week = parse_number<int>(f[1], "week", line_no);
        const double fvc = parse_number<double>(f[2], "FVC", line_no);
        const double percent = parse_number<double>(f[3], "Percent", line_no);
        const double age = parse_number<double>(f[4], "Age", line_no);
        if (!(fvc > 0.0)) throw DataError("line " + std::to_string(line_no) + ": FVC must be positive");
        if (!(age > 0.0 && age < 130.0)) throw DataError("line " + std::to_string(line_no) + ": age out of range");
        Demographics demo;
        demo.age_years = age;
        try {
            demo.sex = parse_sex(f[5]);
            demo.smoking = parse_smoking(f[6]);
        } catch (const ValidationError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }

        auto [it, inserted] = index.try_emplace(f[0], records.size());
        if (inserted) {
            PatientRecord r;
            r.patient_id = f[0];
            r.demographics = demo;
            r.ct_ref = ct_root.empty() ? std::filesystem::path() : ct_root / f[0];
            records.push_back(std::move(r));
        }
        PatientRecord& r = records[it->second];
        r.fvc_series.weeks.push_back(week);
        r.fvc_series.fvc_ml.push_back(fvc);
        r.percent.push_back(percent);
    }
    return records;
}

void write_clinical_csv(const std::filesystem::path& path, const std::vector<PatientRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write clinical file: " + path.string());
    out << kClinicalHeader << '\n';
    for (const PatientRecord& r : records) {
        for (std::size_t i = 0; i < r.fvc_series.size(); ++i) {
            out << r.patient_id << ',' << r.fvc_series.weeks[i] << ',' << format_double(r.fvc_series.fvc_ml[i])
                << ',' << format_double(i < r.percent.size() ? r.percent[i] : 0.0) << ','
                << format_double(r.demographics.age_years) << ',' << to_string(r.demographics.sex) << ','
                << to_string(r.demographics.smoking) << '\n';
        }
    }
}

std::size_t baseline_index(const FvcSeries& series) {
    if (series.weeks.empty()) throw ValidationError("baseline_index: empty series");
    std::size_t best = 0;
    for (std::size_t i = 1; i < series.weeks.size(); ++i) {
        if (series.weeks[i] < series.weeks[best]) best = i;
    }
    return best;
}

FvcSeries drop_negative_weeks(const FvcSeries& series) {
    FvcSeries out;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series.weeks[i] < 0) continue;
        out.weeks.push_back(series.weeks[i]);
        out.fvc_ml.push_back(series.fvc_ml[i]);
    }
    return out;
}

} // namespace fibro
