#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dyntomo/io.hpp"
#include "dyntomo/tomo.hpp"
#include "support/testutil.hpp"

using namespace dyntomo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("dyntomo_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// float32 payloads: quantise to storage precision before comparing round trips
ImageSeries float_precision_series(int frames, int n, std::uint64_t seed) {
    Grid2D g = Grid2D::centered(n, n, 0.5);
    std::vector<double> times;
    std::vector<Image2D> imgs;
    for (int j = 0; j < frames; ++j) {
        times.push_back(0.25 * j);
        Image2D img = testutil::random_image(g, seed + j);
        for (double& v : img.v) v = static_cast<float>(v);
        imgs.push_back(std::move(img));
    }
    return ImageSeries(times, imgs);
}

}  // namespace

TEST_CASE("image series round trip preserves values") {
    TempDir tmp("io_series");
    ImageSeries s = float_precision_series(3, 12, 100);
    io::write_dataset(tmp.path, s, "test data");
    ImageSeries r = io::read_image_series(tmp.path);
    REQUIRE(r.n_frames() == 3);
    CHECK(r.times == s.times);
    for (int j = 0; j < 3; ++j) CHECK(r.frames[j].v == s.frames[j].v);
    CHECK(io::dataset_kind(tmp.path) == "image_series");
}

TEST_CASE("write-read-write is byte identical") {
    TempDir tmp("io_bytes");
    ImageSeries s = float_precision_series(2, 9, 7);
    io::write_dataset(tmp.path / "a", s);
    ImageSeries r = io::read_image_series(tmp.path / "a");
    io::write_dataset(tmp.path / "b", r);
    for (const char* name : {"meta.json", "frame_0000.raw", "frame_0001.raw"}) {
        std::ifstream fa(tmp.path / "a" / name, std::ios::binary);
        std::ifstream fb(tmp.path / "b" / name, std::ios::binary);
        std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        CHECK(da == db);
    }
}

TEST_CASE("vector field series round trip") {
    TempDir tmp("io_vf");
    Grid2D g = Grid2D::centered(8, 6, 1.0);
    VectorFieldSeries s;
    s.times = {0.0, 1.0};
    for (int j = 0; j < 2; ++j) {
        VectorField2D f = testutil::random_field(g, 50 + j);
        for (double& v : f.x) v = static_cast<float>(v);
        for (double& v : f.y) v = static_cast<float>(v);
        s.fields.push_back(std::move(f));
    }
    io::write_dataset(tmp.path, s);
    VectorFieldSeries r = io::read_vector_field_series(tmp.path);
    for (int j = 0; j < 2; ++j) {
        CHECK(r.fields[j].x == s.fields[j].x);
        CHECK(r.fields[j].y == s.fields[j].y);
    }
}

TEST_CASE("gated dataset round trip keeps schedule and noise metadata") {
    TempDir tmp("io_gated");
    Grid2D g = Grid2D::centered(16, 16, 1.0);
    ImageSeries truth({0.0, 0.5}, {testutil::disc_image(g, 0, 0, 5), testutil::disc_image(g, 1, 0, 5)});
    tomo::ScheduleParams p;
    p.n_frames = 2;
    p.n_angles = 5;
    p.n_det = tomo::default_n_det(g);
    auto sched = tomo::make_schedule(tomo::ScheduleScheme::RandomWindow, p, 11);
    tomo::GatedDataset ds = tomo::project_series(truth, sched);
    ds = tomo::add_noise(ds, tomo::NoiseModel::gaussian(20.0), 3);
    ds.notes = "round trip";
    for (auto& s : ds.sinograms)
        for (double& v : s.v) v = static_cast<float>(v);

    io::write_dataset(tmp.path, ds);
    tomo::GatedDataset r = io::read_gated_dataset(tmp.path);
    CHECK(r.seed == ds.seed);
    CHECK(r.notes == ds.notes);
    CHECK(r.noise.kind == tomo::NoiseKind::Gaussian);
    CHECK(r.noise.snr_db == ds.noise.snr_db);
    REQUIRE(r.n_frames() == 2);
    for (int j = 0; j < 2; ++j) {
        CHECK(r.schedule.frames[j].angles == ds.schedule.frames[j].angles);
        CHECK(r.sinograms[j].v == ds.sinograms[j].v);
    }
}

TEST_CASE("distinct errors: malformed header, bad version, truncated payload") {
    TempDir tmp("io_err");
    ImageSeries s = float_precision_series(1, 6, 3);
    io::write_dataset(tmp.path, s);

    SUBCASE("truncated payload") {
        fs::resize_file(tmp.path / "frame_0000.raw", 10);
        CHECK_THROWS_AS(io::read_image_series(tmp.path), io::PayloadSizeError);
    }
    SUBCASE("unsupported version") {
        std::ifstream in(tmp.path / "meta.json");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto pos = text.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 19, "\"format_version\": 99");
        std::ofstream out(tmp.path / "meta.json", std::ios::trunc);
        out << text;
        out.close();
        CHECK_THROWS_AS(io::read_image_series(tmp.path), io::UnsupportedVersionError);
    }
    SUBCASE("malformed header") {
        std::ofstream out(tmp.path / "meta.json", std::ios::trunc);
        out << "{ not json";
        out.close();
        CHECK_THROWS_AS(io::read_image_series(tmp.path), io::MalformedHeaderError);
    }
    SUBCASE("missing meta.json") {
        fs::remove(tmp.path / "meta.json");
        CHECK_THROWS_AS(io::read_image_series(tmp.path), io::MalformedHeaderError);
    }
    SUBCASE("kind mismatch") {
        CHECK_THROWS_AS(io::read_gated_dataset(tmp.path), io::MalformedHeaderError);
    }
}

TEST_CASE("pgm16 export writes the P5 header and sidecar window") {
    TempDir tmp("io_pgm");
    Grid2D g = Grid2D::centered(4, 3, 1.0);
    Image2D img(g);
    for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(i);
    io::write_pgm16_auto(tmp.path / "img.pgm", img);

    std::ifstream in(tmp.path / "img.pgm", std::ios::binary);
    std::string magic, dims;
    std::getline(in, magic);
    CHECK(magic == "P5");
    int w, h, maxval;
    in >> w >> h >> maxval;
    CHECK(w == 4);
    CHECK(h == 3);
    CHECK(maxval == 65535);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
    REQUIRE(payload.size() == 4 * 3 * 2);
    // first pixel windows to 0, last to 65535 (big-endian)
    CHECK(payload[0] == 0);
    CHECK(payload[1] == 0);
    CHECK(payload[payload.size() - 2] == 0xFF);
    CHECK(payload[payload.size() - 1] == 0xFF);
    CHECK(fs::exists(tmp.path / "img.pgm.json"));
}
