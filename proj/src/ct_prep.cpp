#include "fibro/ct_prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>

#include "fibro/error.hpp"
#include "json.hpp"

namespace fibro {

namespace fs = std::filesystem;
using nlohmann::json;

void CtVolume::validate() const {
    if (slices.empty()) throw ValidationError("ct volume '" + patient_id + "' has no slices");
    const std::size_t h = slices.front().height, w = slices.front().width;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        if (slices[i].height != h || slices[i].width != w || slices[i].size() != h * w) {
            throw ValidationError("ct volume '" + patient_id + "': slice " + std::to_string(i) +
                                  " size differs from slice 0");
        }
    }
    if (!(spacing_mm.dx > 0.0 && spacing_mm.dy > 0.0 && spacing_mm.dz > 0.0)) {
        throw ValidationError("ct volume '" + patient_id + "': spacing must be positive");
    }
}

namespace {

std::string slice_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "slice_%04zu.raw", i);
    return buf;
}

} // namespace

CtVolume load_ct_volume(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw DataError("missing CT metadata: " + meta_path.string());
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::exception& e) {
        throw DataError("malformed " + meta_path.string() + ": " + e.what());
    }
    CtVolume vol;
    std::size_t n = 0, h = 0, w = 0;
    try {
        vol.patient_id = meta.at("patient_id").get<std::string>();
        const auto sp = meta.at("spacing_mm").get<std::vector<double>>();
        if (sp.size() != 3) throw DataError("spacing_mm must have 3 entries");
        vol.spacing_mm = {sp[0], sp[1], sp[2]};
        n = meta.at("n_slices").get<std::size_t>();
        const auto dims = meta.at("dims").get<std::vector<std::size_t>>();
        if (dims.size() != 2) throw DataError("dims must be [H, W]");
        h = dims[0];
        w = dims[1];
    } catch (const json::exception& e) {
        throw DataError("malformed " + meta_path.string() + ": " + e.what());
    }

    std::vector<IntRaster> slices;
    slices.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const fs::path p = dir / slice_file_name(i);
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("missing CT slice: " + p.string());
        IntRaster r(h, w);
        std::vector<unsigned char> buf(2 * h * w);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw DataError("truncated CT slice: " + p.string());
        for (std::size_t k = 0; k < h * w; ++k) {
            const auto u = static_cast<std::uint16_t>(buf[2 * k] | (buf[2 * k + 1] << 8));
            r.pixels[k] = static_cast<std::int16_t>(u);
        }
        slices.push_back(std::move(r));
    }

    if (meta.contains("slice_positions")) {
        const auto pos = meta["slice_positions"].get<std::vector<double>>();
        if (pos.size() != n) throw DataError("slice_positions length differs from n_slices");
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pos[a] < pos[b]; });
        for (std::size_t i : order) vol.slices.push_back(std::move(slices[i]));
    } else {
        vol.slices = std::move(slices);
    }
    vol.validate();
    return vol;
}

void save_ct_volume(const fs::path& dir, const CtVolume& volume,
                    const std::vector<double>* slice_positions) {
    volume.validate();
    fs::create_directories(dir);
    json meta;
    meta["patient_id"] = volume.patient_id;
    meta["spacing_mm"] = {volume.spacing_mm.dx, volume.spacing_mm.dy, volume.spacing_mm.dz};
    meta["n_slices"] = volume.slices.size();
    meta["dims"] = {volume.slices.front().height, volume.slices.front().width};
    if (slice_positions) meta["slice_positions"] = *slice_positions;
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
    for (std::size_t i = 0; i < volume.slices.size(); ++i) {
        const IntRaster& r = volume.slices[i];
        std::vector<unsigned char> buf(2 * r.size());
        for (std::size_t k = 0; k < r.size(); ++k) {
            const auto v = static_cast<std::int16_t>(std::clamp<std::int32_t>(r.pixels[k], -32768, 32767));
            const auto u = static_cast<std::uint16_t>(v);
            buf[2 * k] = static_cast<unsigned char>(u & 0xff);
            buf[2 * k + 1] = static_cast<unsigned char>(u >> 8);
        }
        std::ofstream out(dir / slice_file_name(i), std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw DataError("cannot write CT slice in " + dir.string());
    }
}

SliceBand truncated_band(std::size_t n_slices) {
    const std::size_t cut = (15 * n_slices) / 100;
    return {cut, n_slices - cut};
}

SliceChoice select_slice(std::size_t n_slices, std::uint64_t seed) {
    if (n_slices == 0) throw ValidationError("select_slice: volume has no slices");
    const SliceBand band = truncated_band(n_slices);
    if (band.hi <= band.lo) {
        return {n_slices / 2, "slice band empty after truncation; using middle slice"};
    }
    std::mt19937_64 rng(seed);
    const std::uint64_t span = band.hi - band.lo;
    return {band.lo + static_cast<std::size_t>(rng() % span), std::nullopt};
}

SliceChoice select_slice(const CtVolume& volume, std::uint64_t seed) {
    return select_slice(volume.slices.size(), seed);
}

double normalize_intensity(std::int32_t value) {
    const double v = (static_cast<double>(value) - kIntensityMin) / (kIntensityMax - kIntensityMin);
    return std::clamp(v, 0.0, 1.0);
}

RealRaster normalize_intensity(const IntRaster& slice) {
    RealRaster out(slice.height, slice.width);
    for (std::size_t i = 0; i < slice.size(); ++i) out.pixels[i] = normalize_intensity(slice.pixels[i]);
    return out;
}

RealRaster resize_bilinear(const RealRaster& src, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ValidationError("resize_bilinear: target dims must be >= 1");
    if (src.height == 0 || src.width == 0) throw ValidationError("resize_bilinear: empty source");
    auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
        if (n_out == 1) return 0.5 * static_cast<double>(n_in - 1);
        return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
    };
    RealRaster out(height, width);
    for (std::size_t r = 0; r < height; ++r) {
        const double y = coord(r, height, src.height);
        const auto y0 = std::min(static_cast<std::size_t>(y), src.height - 1);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < width; ++c) {
            const double x = coord(c, width, src.width);
            const auto x0 = std::min(static_cast<std::size_t>(x), src.width - 1);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = src.at(y0, x0) + fx * (src.at(y0, x1) - src.at(y0, x0));
            const double bot = src.at(y1, x0) + fx * (src.at(y1, x1) - src.at(y1, x0));
            out.at(r, c) = top + fy * (bot - top);
        }
    }
    return out;
}

PreparedSlice prepare_slice(const CtVolume& volume, std::size_t index, std::size_t height,
                            std::size_t width) {
    if (index >= volume.slices.size()) throw ValidationError("prepare_slice: index out of range");
    PreparedSlice p;
    p.pixels = resize_bilinear(normalize_intensity(volume.slices[index]), height, width);
    for (double& v : p.pixels.pixels) v = std::clamp(v, 0.0, 1.0);
    p.source_index = index;
    return p;
}

RealRaster sobel_magnitude(const IntRaster& s) {
    RealRaster g(s.height, s.width);
    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto w = static_cast<std::ptrdiff_t>(s.width);
    auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        r = std::clamp<std::ptrdiff_t>(r, 0, h - 1);
        c = std::clamp<std::ptrdiff_t>(c, 0, w - 1);
        return static_cast<double>(s.pixels[static_cast<std::size_t>(r * w + c)]);
    };
    for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t c = 0; c < w; ++c) {
            const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
            const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                              (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
            g.pixels[static_cast<std::size_t>(r * w + c)] = std::hypot(gx, gy);
        }
    }
    return g;
}

MaskResult watershed_lung_mask(const IntRaster& slice, const WatershedParams& params) {
    if (params.t_low > params.t_high) throw ValidationError("watershed: t_low must not exceed t_high");
    const std::size_t h = slice.height, w = slice.width, n = slice.size();
    constexpr std::uint8_t kNone = 0, kLung = 1, kBackground = 2;
    std::vector<std::uint8_t> label(n, kNone);

    // Connected components of the below-t_low set, 4-connectivity.
    std::vector<char> visited(n, 0);
    std::vector<std::size_t> component;
    std::vector<std::size_t> stack;
    bool any_lung = false;
    for (std::size_t start = 0; start < n; ++start) {
        if (visited[start] || slice.pixels[start] >= params.t_low) continue;
        component.clear();
        stack.assign(1, start);
        visited[start] = 1;
        bool touches_border = false;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            component.push_back(p);
            const std::size_t r = p / w, c = p % w;
            if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) touches_border = true;
            auto visit = [&](std::size_t q) {
                if (!visited[q] && slice.pixels[q] < params.t_low) {
                    visited[q] = 1;
                    stack.push_back(q);
                }
            };
            if (r > 0) visit(p - w);
            if (r + 1 < h) visit(p + w);
            if (c > 0) visit(p - 1);
            if (c + 1 < w) visit(p + 1);
        }
        const std::uint8_t l = touches_border ? kBackground : kLung;
        any_lung = any_lung || l == kLung;
        for (std::size_t p : component) label[p] = l;
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (slice.pixels[p] > params.t_high) label[p] = kBackground;
    }

    MaskResult result;
    result.mask = LungMask(h, w, 0);
    if (!any_lung) {
        result.warning = "no internal lung marker found";
        return result;
    }

    // Priority flood over the gradient magnitude; ties resolved FIFO.
    const RealRaster grad = sobel_magnitude(slice);
    struct Entry {
        double priority;
        std::uint64_t order;
        std::size_t pixel;
        std::uint8_t label;
        bool operator>(const Entry& o) const {
            return priority != o.priority ? priority > o.priority : order > o.order;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    std::uint64_t order = 0;
    auto push_neighbours = [&](std::size_t p, std::uint8_t l) {
        const std::size_t r = p / w, c = p % w;
        auto push = [&](std::size_t q) {
            if (label[q] == kNone) queue.push({grad.pixels[q], order++, q, l});
        };
        if (r > 0) push(p - w);
        if (r + 1 < h) push(p + w);
        if (c > 0) push(p - 1);
        if (c + 1 < w) push(p + 1);
    };
    for (std::size_t p = 0; p < n; ++p) {
        if (label[p] != kNone) push_neighbours(p, label[p]);
    }
    while (!queue.empty()) {
        const Entry e = queue.top();
        queue.pop();
        if (label[e.pixel] != kNone) continue;
        label[e.pixel] = e.label;
        push_neighbours(e.pixel, e.label);
    }

    for (std::size_t p = 0; p < n; ++p) result.mask.pixels[p] = label[p] == kLung ? 1 : 0;
    return result;
}

IntRaster apply_mask(const IntRaster& slice, const LungMask& mask) {
    if (slice.height != mask.height || slice.width != mask.width) {
        throw ValidationError("apply_mask: mask and slice sizes differ");
    }
    IntRaster out = slice;
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] *= mask.pixels[i];
    return out;
}

double volume_from_masks(const std::vector<LungMask>& masks, const Spacing& spacing) {
    std::uint64_t count = 0;
    for (const LungMask& m : masks)
        for (std::uint8_t v : m.pixels) count += v;
    return static_cast<double>(count) * spacing.dx * spacing.dy * spacing.dz;
}

VolumeEstimate estimate_volume(const CtVolume& volume, const WatershedParams& params) {
    volume.validate();
    VolumeEstimate est;
    std::vector<LungMask> masks;
    masks.reserve(volume.slices.size());
    for (std::size_t i = 0; i < volume.slices.size(); ++i) {
        MaskResult r = watershed_lung_mask(volume.slices[i], params);
        if (r.warning) est.slices_without_marker.push_back(i);
        masks.push_back(std::move(r.mask));
    }
    est.volume_mm3 = volume_from_masks(masks, volume.spacing_mm);
    return est;
}

} // namespace fibro
