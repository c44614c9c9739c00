#include "fibro/prepared.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fibro/checkpoint.hpp"
#include "fibro/error.hpp"
#include "fibro/hash.hpp"

namespace fibro {

namespace fs = std::filesystem;

namespace {
constexpr char kPreparedMagic[8] = {'F', 'I', 'B', 'R', 'O', 'P', 'D', 'S'};
}

const RealRaster& PreparedPatient::slice_at(std::size_t source_index) const {
    if (source_index < band.lo || source_index >= band.hi || source_index - band.lo >= band_slices.size()) {
        throw ValidationError("patient '" + patient_id + "': slice " + std::to_string(source_index) +
                              " is outside the prepared band");
    }
    return band_slices[source_index - band.lo];
}

FeatureRow PreparedPatient::feature_row() const {
    return {demographics, volume_mm3, fvc_series.fvc_ml.at(baseline_row())};
}

const PreparedPatient& PreparedDataset::find(const std::string& id) const {
    for (const PreparedPatient& p : patients)
        if (p.patient_id == id) return p;
    throw ValidationError("unknown patient '" + id + "'");
}

std::vector<std::string> PreparedDataset::patient_ids() const {
    std::vector<std::string> ids;
    for (const PreparedPatient& p : patients) ids.push_back(p.patient_id);
    return ids;
}

std::optional<SlopeLabel> pseudo_label(const FvcSeries& series, bool include_negative_weeks, std::string* reason) {
    const FvcSeries s = include_negative_weeks ? series : drop_negative_weeks(series);
    const std::set<int> distinct(s.weeks.begin(), s.weeks.end());
    if (s.size() < 2 || distinct.size() < 2) {
        if (reason) *reason = "fvc series too short for a slope fit (" + std::to_string(s.size()) + " usable points)";
        return std::nullopt;
    }
    return fit_slope(s);
}

PreparedPatient prepare_patient(const PatientRecord& record, const PrepareOptions& options) {
    PreparedPatient p;
    p.patient_id = record.patient_id;
    p.demographics = record.demographics;
    p.fvc_series = record.fvc_series;
    std::string reason;
    p.label = pseudo_label(record.fvc_series, options.include_negative_weeks, &reason);
    if (!p.label) p.warnings.push_back(reason);

    if (record.ct_ref.empty() || !fs::exists(record.ct_ref / "meta.json")) {
        p.warnings.push_back("missing CT volume");
        return p;
    }
    const CtVolume vol = load_ct_volume(record.ct_ref);
    p.has_ct = true;
    p.n_slices = vol.slices.size();
    const VolumeEstimate est = estimate_volume(vol, options.watershed);
    p.volume_mm3 = est.volume_mm3;
    if (!est.slices_without_marker.empty()) {
        p.warnings.push_back(std::to_string(est.slices_without_marker.size()) + " slices without lung marker");
    }
    const SliceChoice choice = select_slice(vol, derive_seed(options.seed, {fnv1a64(record.patient_id)}));
    if (choice.warning) p.warnings.push_back(*choice.warning);
    p.eval_index = choice.index;
    p.band = truncated_band(p.n_slices);
    if (p.band.hi <= p.band.lo) p.band = {choice.index, choice.index + 1};
    for (std::size_t i = p.band.lo; i < p.band.hi; ++i) {
        p.band_slices.push_back(prepare_slice(vol, i, options.height, options.width).pixels);
    }
    return p;
}

PreparedDataset prepare_dataset(const fs::path& data_dir, const PrepareOptions& options) {
    if (!fs::is_directory(data_dir)) throw DataError("data directory not found: " + data_dir.string());
    const auto records = load_clinical_csv(data_dir / "train.csv", data_dir / "ct");
    PreparedDataset ds;
    ds.seed = options.seed;
    ds.height = options.height;
    ds.width = options.width;
    ds.include_negative_weeks = options.include_negative_weeks;
    for (const PatientRecord& r : records) ds.patients.push_back(prepare_patient(r, options));
    return ds;
}

void save_prepared(const fs::path& path, const PreparedDataset& ds) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write prepared dataset: " + path.string());
    os.write(kPreparedMagic, sizeof(kPreparedMagic));
    le::put_u32(os, kPreparedFormatVersion);
    le::put_u64(os, ds.seed);
    le::put_u64(os, ds.height);
    le::put_u64(os, ds.width);
    le::put_u32(os, ds.include_negative_weeks ? 1 : 0);
    le::put_u64(os, ds.patients.size());
    for (const PreparedPatient& p : ds.patients) {
        le::put_str(os, p.patient_id);
        le::put_f64(os, p.demographics.age_years);
        le::put_u32(os, static_cast<std::uint32_t>(p.demographics.sex));
        le::put_u32(os, static_cast<std::uint32_t>(p.demographics.smoking));
        le::put_u64(os, p.fvc_series.size());
        for (std::size_t i = 0; i < p.fvc_series.size(); ++i) {
            le::put_u32(os, static_cast<std::uint32_t>(p.fvc_series.weeks[i]));
            le::put_f64(os, p.fvc_series.fvc_ml[i]);
        }
        le::put_u32(os, p.label ? 1 : 0);
        const SlopeLabel l = p.label.value_or(SlopeLabel{});
        le::put_f64(os, l.slope_ml_per_week);
        le::put_f64(os, l.intercept_ml);
        le::put_f64(os, l.residual_norm);
        le::put_f64(os, p.volume_mm3);
        le::put_u32(os, static_cast<std::uint32_t>(p.warnings.size()));
        for (const std::string& w : p.warnings) le::put_str(os, w);
        le::put_u32(os, p.has_ct ? 1 : 0);
        le::put_u64(os, p.n_slices);
        le::put_u64(os, p.band.lo);
        le::put_u64(os, p.band.hi);
        le::put_u64(os, p.eval_index);
        le::put_u64(os, p.band_slices.size());
        for (const RealRaster& r : p.band_slices) {
            if (r.height != ds.height || r.width != ds.width) throw ValidationError("prepared slice has wrong size");
            for (double v : r.pixels) le::put_f64(os, v);
        }
    }
    if (!os) throw DataError("write failed: " + path.string());
}

PreparedDataset load_prepared(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open prepared dataset: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || !std::equal(magic, magic + 8, kPreparedMagic)) {
        throw DataError(path.string() + ": not a prepared dataset");
    }
    const std::uint32_t version = le::get_u32(is);
    if (version != kPreparedFormatVersion) {
        throw DataError(path.string() + ": unsupported prepared format version " + std::to_string(version));
    }
    PreparedDataset ds;
    ds.seed = le::get_u64(is);
    ds.height = le::get_u64(is);
    ds.width = le::get_u64(is);
    ds.include_negative_weeks = le::get_u32(is) != 0;
    const std::uint64_t n = le::get_u64(is);
    for (std::uint64_t k = 0; k < n; ++k) {
        PreparedPatient p;
        p.patient_id = le::get_str(is);
        p.demographics.age_years = le::get_f64(is);
        const std::uint32_t sex = le::get_u32(is), smoking = le::get_u32(is);
        if (sex > 1 || smoking > 2) throw DataError(path.string() + ": bad demographic code");
        p.demographics.sex = static_cast<Sex>(sex);
        p.demographics.smoking = static_cast<Smoking>(smoking);
        const std::uint64_t points = le::get_u64(is);
        for (std::uint64_t i = 0; i < points; ++i) {
            p.fvc_series.weeks.push_back(static_cast<std::int32_t>(le::get_u32(is)));
            p.fvc_series.fvc_ml.push_back(le::get_f64(is));
        }
        const bool has_label = le::get_u32(is) != 0;
        SlopeLabel l;
        l.slope_ml_per_week = le::get_f64(is);
        l.intercept_ml = le::get_f64(is);
        l.residual_norm = le::get_f64(is);
        if (has_label) p.label = l;
        p.volume_mm3 = le::get_f64(is);
        const std::uint32_t nw = le::get_u32(is);
        for (std::uint32_t i = 0; i < nw; ++i) p.warnings.push_back(le::get_str(is));
        p.has_ct = le::get_u32(is) != 0;
        p.n_slices = le::get_u64(is);
        p.band.lo = le::get_u64(is);
        p.band.hi = le::get_u64(is);
        p.eval_index = le::get_u64(is);
        const std::uint64_t ns = le::get_u64(is);
        if (p.has_ct && ns != p.band.hi - p.band.lo) throw DataError(path.string() + ": band size mismatch");
        for (std::uint64_t s = 0; s < ns; ++s) {
            RealRaster r(ds.height, ds.width);
            for (double& v : r.pixels) v = le::get_f64(is);
            p.band_slices.push_back(std::move(r));
        }
        ds.patients.push_back(std::move(p));
    }
    return ds;
}

void write_volumes_csv(const fs::path& path, const PreparedDataset& ds) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "patient_id,volume_mm3,n_slices,warnings\n";
    for (const PreparedPatient& p : ds.patients) {
        std::string warnings;
        for (const std::string& w : p.warnings) warnings += (warnings.empty() ? "" : ";") + w;
        out << p.patient_id << ',' << format_double(p.volume_mm3) << ',' << p.n_slices << ',' << warnings << '\n';
    }
}

void write_slopes_csv(const fs::path& path, const std::vector<PatientRecord>& records, bool include_negative_weeks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "patient_id,slope,intercept,residual_norm,n_points\n";
    for (const PatientRecord& r : records) {
        const auto label = pseudo_label(r.fvc_series, include_negative_weeks);
        if (!label) continue;
        const std::size_t n = include_negative_weeks ? r.fvc_series.size() : drop_negative_weeks(r.fvc_series).size();
        out << r.patient_id << ',' << format_double(label->slope_ml_per_week) << ','
            << format_double(label->intercept_ml) << ',' << format_double(label->residual_norm) << ',' << n << '\n';
    }
}

} // namespace fibro
