#include "fibro/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fibro/clinical.hpp"
#include "fibro/error.hpp"
#include "fibro/hash.hpp"

namespace fibro {

double Ellipsoid::volume_mm3() const { return 4.0 / 3.0 * std::numbers::pi * rx * ry * rz; }

double PhantomSpec::lung_volume_mm3() const {
    double v = 0.0;
    for (const Ellipsoid& e : lungs) v += e.volume_mm3();
    return v;
}

CtVolume render_phantom(const PhantomSpec& spec, const std::string& patient_id) {
    constexpr int kSub = 4;
    CtVolume vol;
    vol.patient_id = patient_id;
    vol.spacing_mm = spec.spacing;
    std::mt19937_64 rng(spec.noise_seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
    const Spacing& sp = spec.spacing;
    for (std::size_t k = 0; k < spec.n_slices; ++k) {
        const double z = (static_cast<double>(k) + 0.5) * sp.dz;
        IntRaster slice(spec.height, spec.width);
        for (std::size_t r = 0; r < spec.height; ++r) {
            for (std::size_t c = 0; c < spec.width; ++c) {
                int body_hits = 0, lung_hits = 0;
                for (int sy = 0; sy < kSub; ++sy) {
                    for (int sx = 0; sx < kSub; ++sx) {
                        const double x = (static_cast<double>(c) + (sx + 0.5) / kSub) * sp.dx;
                        const double y = (static_cast<double>(r) + (sy + 0.5) / kSub) * sp.dy;
                        const double bx = (x - spec.body_cx) / spec.body_rx;
                        const double by = (y - spec.body_cy) / spec.body_ry;
                        if (bx * bx + by * by > 1.0) continue;
                        ++body_hits;
                        for (const Ellipsoid& e : spec.lungs) {
                            const double ex = (x - e.cx) / e.rx, ey = (y - e.cy) / e.ry, ez = (z - e.cz) / e.rz;
                            if (ex * ex + ey * ey + ez * ez <= 1.0) {
                                ++lung_hits;
                                break;
                            }
                        }
                    }
                }
                const double n = kSub * kSub;
                double v = spec.air_value * (n - body_hits) / n + spec.tissue_value * (body_hits - lung_hits) / n +
                           spec.lung_value * lung_hits / n;
                if (spec.noise_sd > 0.0) v += noise(rng);
                slice.at(r, c) = static_cast<std::int32_t>(std::lround(std::clamp(v, 0.0, kIntensityMax)));
            }
        }
        vol.slices.push_back(std::move(slice));
    }
    return vol;
}

PhantomSpec two_lung_phantom(std::size_t height, std::size_t width, std::size_t n_slices, const Spacing& sp,
                             double size_factor) {
    PhantomSpec spec;
    spec.height = height;
    spec.width = width;
    spec.n_slices = n_slices;
    spec.spacing = sp;
    const double fov_x = static_cast<double>(width) * sp.dx;
    const double fov_y = static_cast<double>(height) * sp.dy;
    const double depth = static_cast<double>(n_slices) * sp.dz;
    spec.body_cx = 0.5 * fov_x;
    spec.body_cy = 0.5 * fov_y;
    spec.body_rx = 0.45 * fov_x;
    spec.body_ry = 0.36 * fov_y;
    for (double side : {-1.0, 1.0}) {
        Ellipsoid e;
        e.cx = spec.body_cx + side * 0.19 * fov_x;
        e.cy = spec.body_cy;
        e.cz = 0.5 * depth;
        e.rx = 0.12 * fov_x * size_factor;
        e.ry = 0.22 * fov_y * size_factor;
        e.rz = 0.34 * depth * size_factor;
        spec.lungs.push_back(e);
    }
    return spec;
}

std::vector<TruthRow> generate_synthetic(const std::filesystem::path& out, const SynthOptions& o) {
    if (o.n_patients < 2) throw ValidationError("synth: need at least 2 patients");
    if (o.noise_ml < 0.0) throw ValidationError("synth: noise must be >= 0");
    std::filesystem::create_directories(out / "ct");

    std::vector<PatientRecord> records;
    std::vector<TruthRow> truth;
    for (std::size_t i = 0; i < o.n_patients; ++i) {
        std::mt19937_64 rng(derive_seed(o.seed, {i}));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        char id[32];
        std::snprintf(id, sizeof(id), "ID%05zu", i);

        PatientRecord r;
        r.patient_id = id;
        const double slope = -14.0 + 12.0 * unit(rng);
        r.demographics.age_years = std::round(55.0 + 30.0 * unit(rng));
        r.demographics.sex = unit(rng) < 0.7 ? Sex::Male : Sex::Female;
        const double sm = unit(rng);
        r.demographics.smoking = sm < 0.6 ? Smoking::ExSmoker : (sm < 0.9 ? Smoking::NeverSmoked : Smoking::CurrentlySmokes);
        const bool male = r.demographics.sex == Sex::Male;
        const double baseline = male ? 2600.0 + 1200.0 * unit(rng) : 1800.0 + 1000.0 * unit(rng);

        const int first_week = static_cast<int>(std::floor(9.0 * unit(rng))) - 4;
        const std::size_t visits = 6 + static_cast<std::size_t>(rng() % 4);
        std::set<int> weeks{first_week};
        while (weeks.size() < visits) weeks.insert(first_week + 3 + static_cast<int>(rng() % 68));
        for (int w : weeks) {
            const double fvc = slope * w + baseline + o.noise_ml * gauss(rng);
            r.fvc_series.weeks.push_back(w);
            r.fvc_series.fvc_ml.push_back(fvc);
            r.percent.push_back(100.0 * fvc / (1.25 * baseline));
        }

        // Linear in slope, slightly larger for men, small jitter.
        const double volume_scale = (1.0 + 0.05 * (slope + 8.0)) * (male ? 1.06 : 0.94) * (1.0 + 0.02 * gauss(rng));
        const double size_factor = std::cbrt(std::max(volume_scale, 0.3));
        PhantomSpec spec = two_lung_phantom(o.height, o.width, o.n_slices, o.spacing, size_factor);
        spec.noise_sd = 15.0;
        spec.noise_seed = derive_seed(o.seed, {i, 1});
        const CtVolume vol = render_phantom(spec, r.patient_id);
        std::vector<double> positions;
        for (std::size_t k = 0; k < o.n_slices; ++k) positions.push_back((static_cast<double>(k) + 0.5) * o.spacing.dz);
        save_ct_volume(out / "ct" / r.patient_id, vol, &positions);

        truth.push_back({r.patient_id, slope, spec.lung_volume_mm3()});
        records.push_back(std::move(r));
    }
    write_clinical_csv(out / "train.csv", records);
    std::ofstream t(out / "truth.csv", std::ios::trunc);
    t << "patient_id,true_slope,analytic_volume\n";
    for (const TruthRow& row : truth) {
        t << row.patient_id << ',' << format_double(row.true_slope) << ',' << format_double(row.analytic_volume_mm3)
          << '\n';
    }
    return truth;
}

std::vector<TruthRow> load_truth_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open truth file: " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<TruthRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        TruthRow r;
        std::string slope, vol;
        if (!std::getline(ss, r.patient_id, ',') || !std::getline(ss, slope, ',') || !std::getline(ss, vol)) {
            throw DataError("malformed truth row: " + line);
        }
        r.true_slope = std::stod(slope);
        r.analytic_volume_mm3 = std::stod(vol);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace fibro
