#include "dyntomo/io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dyntomo::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "dataset payloads are little-endian float32");

namespace {

std::string frame_name(int j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%04d.raw", j);
    return buf;
}

void write_floats(const fs::path& file, const std::vector<double>& v) {
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + file.string());
}

std::vector<double> read_floats(const fs::path& file, std::size_t expected) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open: " + file.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(float))
        throw PayloadSizeError("payload size mismatch in " + file.string() + ": got " +
                               std::to_string(bytes) + " bytes, expected " +
                               std::to_string(expected * sizeof(float)));
    in.seekg(0);
    std::vector<float> f(expected);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("read failed: " + file.string());
    std::vector<double> v(expected);
    for (std::size_t i = 0; i < expected; ++i) v[i] = f[i];
    return v;
}

json grid_to_json(const Grid2D& g) {
    return json{{"nx", g.nx},
                {"ny", g.ny},
                {"spacing", g.spacing},
                {"origin_x", g.origin_x},
                {"origin_y", g.origin_y}};
}

Grid2D grid_from_json(const json& j) {
    return Grid2D(j.at("nx").get<int>(), j.at("ny").get<int>(), j.at("spacing").get<double>(),
                  j.at("origin_x").get<double>(), j.at("origin_y").get<double>());
}

void write_meta(const fs::path& dir, const json& meta) {
    fs::create_directories(dir);
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw IoError("cannot write meta.json in " + dir.string());
    out << meta.dump(2) << "\n";
}

json read_meta(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw MalformedHeaderError("missing meta.json in " + dir.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw MalformedHeaderError("invalid meta.json in " + dir.string() + ": " + e.what());
    }
    if (!meta.contains("format_version") || !meta["format_version"].is_number_integer())
        throw MalformedHeaderError("meta.json missing format_version");
    const int v = meta["format_version"].get<int>();
    if (v != kFormatVersion)
        throw UnsupportedVersionError("unsupported dataset format version " + std::to_string(v));
    if (!meta.contains("kind") || !meta["kind"].is_string())
        throw MalformedHeaderError("meta.json missing kind");
    return meta;
}

}  // namespace

void write_dataset(const fs::path& dir, const ImageSeries& series, const std::string& notes) {
    series.validate();
    json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = "image_series";
    meta["grid"] = grid_to_json(series.grid());
    meta["times"] = series.times;
    meta["notes"] = notes;
    std::vector<std::string> names;
    for (int j = 0; j < series.n_frames(); ++j) names.push_back(frame_name(j));
    meta["frames"] = names;
    write_meta(dir, meta);
    for (int j = 0; j < series.n_frames(); ++j)
        write_floats(dir / names[j], series.frames[j].v);
}

void write_dataset(const fs::path& dir, const VectorFieldSeries& series, const std::string& notes) {
    series.validate();
    json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = "vector_field_series";
    meta["grid"] = grid_to_json(series.grid());
    meta["times"] = series.times;
    meta["notes"] = notes;
    std::vector<std::string> names;
    for (int j = 0; j < series.n_fields(); ++j) names.push_back(frame_name(j));
    meta["frames"] = names;
    write_meta(dir, meta);
    for (int j = 0; j < series.n_fields(); ++j) {
        std::vector<double> packed = series.fields[j].x;
        packed.insert(packed.end(), series.fields[j].y.begin(), series.fields[j].y.end());
        write_floats(dir / names[j], packed);
    }
}

void write_dataset(const fs::path& dir, const tomo::GatedDataset& ds) {
    ds.validate();
    json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = "gated_dataset";
    meta["grid"] = grid_to_json(ds.grid);
    meta["times"] = ds.times;
    meta["notes"] = ds.notes;
    meta["n_det"] = ds.schedule.frames[0].n_det;
    meta["det_spacing"] = ds.schedule.frames[0].det_spacing;
    json angles = json::array();
    for (const auto& g : ds.schedule.frames) angles.push_back(g.angles);
    meta["angles"] = angles;
    meta["noise"] = {{"kind", tomo::to_string(ds.noise.kind)},
                     {"snr_db", ds.noise.snr_db},
                     {"scale", ds.noise.scale}};
    meta["seed"] = ds.seed;
    std::vector<std::string> names;
    for (int j = 0; j < ds.n_frames(); ++j) names.push_back(frame_name(j));
    meta["frames"] = names;
    write_meta(dir, meta);
    for (int j = 0; j < ds.n_frames(); ++j) write_floats(dir / names[j], ds.sinograms[j].v);
}

std::string dataset_kind(const fs::path& dir) { return read_meta(dir).at("kind").get<std::string>(); }

ImageSeries read_image_series(const fs::path& dir) {
    json meta = read_meta(dir);
    if (meta.at("kind") != "image_series")
        throw MalformedHeaderError("not an image_series dataset: " + dir.string());
    Grid2D grid = grid_from_json(meta.at("grid"));
    ImageSeries s;
    s.times = meta.at("times").get<std::vector<double>>();
    for (const auto& name : meta.at("frames")) {
        Image2D img(grid);
        img.v = read_floats(dir / name.get<std::string>(), grid.size());
        s.frames.push_back(std::move(img));
    }
    s.validate();
    return s;
}

VectorFieldSeries read_vector_field_series(const fs::path& dir) {
    json meta = read_meta(dir);
    if (meta.at("kind") != "vector_field_series")
        throw MalformedHeaderError("not a vector_field_series dataset: " + dir.string());
    Grid2D grid = grid_from_json(meta.at("grid"));
    VectorFieldSeries s;
    s.times = meta.at("times").get<std::vector<double>>();
    for (const auto& name : meta.at("frames")) {
        std::vector<double> packed = read_floats(dir / name.get<std::string>(), 2 * grid.size());
        VectorField2D f(grid);
        std::copy(packed.begin(), packed.begin() + grid.size(), f.x.begin());
        std::copy(packed.begin() + grid.size(), packed.end(), f.y.begin());
        s.fields.push_back(std::move(f));
    }
    s.validate();
    return s;
}

tomo::GatedDataset read_gated_dataset(const fs::path& dir) {
    json meta = read_meta(dir);
    if (meta.at("kind") != "gated_dataset")
        throw MalformedHeaderError("not a gated_dataset: " + dir.string());
    tomo::GatedDataset ds;
    ds.grid = grid_from_json(meta.at("grid"));
    ds.times = meta.at("times").get<std::vector<double>>();
    const int n_det = meta.at("n_det").get<int>();
    const double det_spacing = meta.at("det_spacing").get<double>();
    for (const auto& a : meta.at("angles"))
        ds.schedule.frames.emplace_back(a.get<std::vector<double>>(), n_det, det_spacing);
    const auto& noise = meta.at("noise");
    ds.noise.kind = tomo::noise_kind_from_string(noise.at("kind").get<std::string>());
    ds.noise.snr_db = noise.at("snr_db").get<double>();
    ds.noise.scale = noise.at("scale").get<double>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.notes = meta.value("notes", "");
    const auto& frames = meta.at("frames");
    for (std::size_t j = 0; j < frames.size(); ++j) {
        const auto& geom = ds.schedule.frames[j];
        tomo::Sinogram s(geom.n_angles(), geom.n_det);
        s.v = read_floats(dir / frames[j].get<std::string>(),
                          static_cast<std::size_t>(geom.n_angles()) * geom.n_det);
        ds.sinograms.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

void write_pgm16(const fs::path& file, const Image2D& img, double window_lo, double window_hi) {
    if (!(window_hi > window_lo)) throw std::invalid_argument("write_pgm16: empty window");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + file.string());
    out << "P5\n" << img.grid.nx << " " << img.grid.ny << "\n65535\n";
    const double scale = 65535.0 / (window_hi - window_lo);
    for (int iy = 0; iy < img.grid.ny; ++iy) {
        for (int ix = 0; ix < img.grid.nx; ++ix) {
            double q = (img.at(ix, iy) - window_lo) * scale;
            q = std::clamp(q, 0.0, 65535.0);
            const auto u = static_cast<std::uint16_t>(std::lround(q));
            const unsigned char bytes[2] = {static_cast<unsigned char>(u >> 8),
                                            static_cast<unsigned char>(u & 0xFF)};
            out.write(reinterpret_cast<const char*>(bytes), 2);
        }
    }
    json sidecar;
    sidecar["window_lo"] = window_lo;
    sidecar["window_hi"] = window_hi;
    sidecar["grid"] = grid_to_json(img.grid);
    std::ofstream sc(file.string() + ".json", std::ios::trunc);
    sc << sidecar.dump(2) << "\n";
}

void write_pgm16_auto(const fs::path& file, const Image2D& img) {
    double lo = img.v.empty() ? 0.0 : img.v[0];
    double hi = lo;
    for (double v : img.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    write_pgm16(file, img, lo, hi);
}

}  // namespace dyntomo::io
