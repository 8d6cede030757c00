#include "hug/colmap.hpp"

#include "hug/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace hug {
namespace {

struct Intrinsics {
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing COLMAP file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

bool is_comment(const std::string& line) {
    const auto p = line.find_first_not_of(" \t");
    return p != std::string::npos && line[p] == '#';
}

bool is_blank(const std::string& line) { return line.find_first_not_of(" \t") == std::string::npos; }

ParseError parse_error(const std::filesystem::path& file, std::size_t line, const std::string& what) {
    return ParseError(file.string() + ":" + std::to_string(line + 1) + ": " + what);
}

std::map<int, Intrinsics> parse_cameras(const std::filesystem::path& path) {
    std::map<int, Intrinsics> cams;
    const auto lines = read_lines(path);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        if (is_comment(lines[n]) || is_blank(lines[n])) continue;
        std::istringstream in(lines[n]);
        int id = 0;
        std::string model;
        Intrinsics k;
        if (!(in >> id >> model >> k.width >> k.height)) throw parse_error(path, n, "malformed camera line");
        if (model == "PINHOLE") {
            if (!(in >> k.fx >> k.fy >> k.cx >> k.cy)) throw parse_error(path, n, "PINHOLE needs 4 parameters");
        } else if (model == "SIMPLE_PINHOLE") {
            if (!(in >> k.fx >> k.cx >> k.cy)) throw parse_error(path, n, "SIMPLE_PINHOLE needs 3 parameters");
            k.fy = k.fx;
        } else {
            throw ParseError(path.string() + ": unsupported camera model " + model);
        }
        cams[id] = k;
    }
    return cams;
}

}  // namespace

SceneBundle load_colmap_text(const std::filesystem::path& directory, const std::filesystem::path& image_root) {
    const auto cameras_path = directory / "cameras.txt";
    const auto images_path = directory / "images.txt";
    const auto points_path = directory / "points3D.txt";
    const auto cams = parse_cameras(cameras_path);

    SceneBundle bundle;
    const auto image_lines = read_lines(images_path);
    // Each image occupies two lines; the second (POINTS2D) may be empty.
    for (std::size_t n = 0; n < image_lines.size(); ++n) {
        if (is_comment(image_lines[n]) || is_blank(image_lines[n])) continue;
        std::istringstream in(image_lines[n]);
        CameraView v;
        int camera_id = 0;
        if (!(in >> v.id >> v.rotation[0] >> v.rotation[1] >> v.rotation[2] >> v.rotation[3] >> v.translation[0] >>
              v.translation[1] >> v.translation[2] >> camera_id))
            throw parse_error(images_path, n, "malformed image line");
        in >> v.name;
        const auto cam = cams.find(camera_id);
        if (cam == cams.end()) throw parse_error(images_path, n, "unknown camera id " + std::to_string(camera_id));
        v.width = cam->second.width;
        v.height = cam->second.height;
        v.fx = cam->second.fx;
        v.fy = cam->second.fy;
        v.cx = cam->second.cx;
        v.cy = cam->second.cy;
        v.rotation.normalize();
        if (!image_root.empty() && !v.name.empty() && std::filesystem::exists(image_root / v.name))
            v.pixels = read_image(image_root / v.name);
        bundle.views.push_back(std::move(v));
        ++n;  // skip POINTS2D line
    }

    std::map<int, bool> known;
    for (const auto& v : bundle.views) known[v.id] = true;
    const auto point_lines = read_lines(points_path);
    for (std::size_t n = 0; n < point_lines.size(); ++n) {
        if (is_comment(point_lines[n]) || is_blank(point_lines[n])) continue;
        std::istringstream in(point_lines[n]);
        SparsePoint p;
        double r = 0, g = 0, b = 0, error = 0;
        if (!(in >> p.id >> p.position[0] >> p.position[1] >> p.position[2] >> r >> g >> b >> error))
            throw parse_error(points_path, n, "malformed point line");
        p.color = Vec3(r, g, b) / 255.0;
        int image_id = 0, point2d = 0;
        while (in >> image_id >> point2d) {
            if (!known.count(image_id))
                throw parse_error(points_path, n, "point references unknown image id " + std::to_string(image_id));
            p.track.insert(image_id);
        }
        if (!in.eof()) throw parse_error(points_path, n, "malformed track");
        bundle.cloud.push_back(std::move(p));
    }
    bundle.update_bbox();
    if (bundle.cloud.empty()) bundle.warnings.push_back("points3D.txt contains no points; bounding box is degenerate");
    else if (bundle.bbox_degenerate) bundle.warnings.push_back("all points coincide; bounding box is degenerate");
    bundle.validate();
    return bundle;
}

void write_colmap_text(const SceneBundle& bundle, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    std::ofstream cams(directory / "cameras.txt");
    std::ofstream imgs(directory / "images.txt");
    std::ofstream pts(directory / "points3D.txt");
    if (!cams || !imgs || !pts) throw IoError("cannot write COLMAP files into " + directory.string());
    for (auto* s : {&cams, &imgs, &pts}) *s << std::setprecision(17);

    cams << "# Camera list with one line of data per camera:\n"
         << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    imgs << "# Image list with two lines of data per image:\n"
         << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
         << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
    pts << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";

    // POINT2D_IDX is the index of the observation within the image's POINTS2D line.
    std::map<int, std::vector<std::pair<long, Vec2>>> observations;
    std::map<std::pair<long, int>, std::size_t> obs_index;
    for (const auto& p : bundle.cloud) {
        for (int vid : p.track) {
            const CameraView* v = bundle.find_view(vid);
            const Vec3 pc = v->to_camera(p.position);
            const Vec2 uv(v->fx * pc.x() / pc.z() + v->cx, v->fy * pc.y() / pc.z() + v->cy);
            auto& list = observations[vid];
            obs_index[{p.id, vid}] = list.size();
            list.emplace_back(p.id, uv);
        }
    }
    for (const auto& v : bundle.views) {
        cams << v.id << " PINHOLE " << v.width << ' ' << v.height << ' ' << v.fx << ' ' << v.fy << ' ' << v.cx << ' '
             << v.cy << '\n';
        imgs << v.id << ' ' << v.rotation[0] << ' ' << v.rotation[1] << ' ' << v.rotation[2] << ' ' << v.rotation[3]
             << ' ' << v.translation[0] << ' ' << v.translation[1] << ' ' << v.translation[2] << ' ' << v.id << ' '
             << (v.name.empty() ? "view_" + std::to_string(v.id) + ".png" : v.name) << '\n';
        bool first = true;
        for (const auto& [pid, uv] : observations[v.id]) {
            imgs << (first ? "" : " ") << uv.x() << ' ' << uv.y() << ' ' << pid;
            first = false;
        }
        imgs << '\n';
    }
    for (const auto& p : bundle.cloud) {
        pts << p.id << ' ' << p.position[0] << ' ' << p.position[1] << ' ' << p.position[2];
        for (int c = 0; c < 3; ++c) pts << ' ' << std::lround(std::clamp(p.color[c], 0.0, 1.0) * 255.0);
        pts << " 0";
        for (int vid : p.track) pts << ' ' << vid << ' ' << obs_index[{p.id, vid}];
        pts << '\n';
    }
}

}  // namespace hug
