#include "vigeo/geometry.hpp"

#include <cmath>
#include <filesystem>

#include "vigeo/io.hpp"

namespace vigeo::geom {

template <class T>
TensorT<T> depth_to_points(const TensorT<T>& depth, const PinholeCamera& cam) {
    if (depth.rank() != 2) throw ShapeError("depth_to_points: depth must be [H x W]");
    const int64_t h = depth.dim(0), w = depth.dim(1);
    TensorT<T> points({3, h, w});
    for (int64_t v = 0; v < h; ++v) {
        for (int64_t u = 0; u < w; ++u) {
            const T d = depth[v * w + u];
            if (!(d > T(0))) throw ContractError("depth_to_points: non-positive depth");
            points[(0 * h + v) * w + u] =
                d * static_cast<T>((static_cast<double>(u) - cam.cx) / cam.fx);
            points[(1 * h + v) * w + u] =
                d * static_cast<T>((static_cast<double>(v) - cam.cy) / cam.fy);
            points[(2 * h + v) * w + u] = d;
        }
    }
    return points;
}

template <class T>
NormalsResult<T> normals_from_points(const TensorT<T>& points) {
    if (points.rank() != 3 || points.dim(0) != 3)
        throw ShapeError("normals_from_points: points must be [3 x H x W]");
    const int64_t h = points.dim(1), w = points.dim(2);
    if (h < 3 || w < 3) throw ShapeError("normals_from_points: needs H, W >= 3");
    NormalsResult<T> res{TensorT<T>({3, h, w}), MaskTensor({h, w})};
    auto p = [&](int64_t c, int64_t v, int64_t u) { return points[(c * h + v) * w + u]; };
    for (int64_t v = 0; v < h; ++v) {
        for (int64_t u = 0; u < w; ++u) {
            T tu[3], tv[3];
            for (int64_t c = 0; c < 3; ++c) {
                if (u == 0) tu[c] = p(c, v, 1) - p(c, v, 0);
                else if (u == w - 1) tu[c] = p(c, v, w - 1) - p(c, v, w - 2);
                else tu[c] = (p(c, v, u + 1) - p(c, v, u - 1)) * T(0.5);
                if (v == 0) tv[c] = p(c, 1, u) - p(c, 0, u);
                else if (v == h - 1) tv[c] = p(c, h - 1, u) - p(c, h - 2, u);
                else tv[c] = (p(c, v + 1, u) - p(c, v - 1, u)) * T(0.5);
            }
            T n[3] = {tu[1] * tv[2] - tu[2] * tv[1],
                      tu[2] * tv[0] - tu[0] * tv[2],
                      tu[0] * tv[1] - tu[1] * tv[0]};
            const T norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            if (norm == T(0)) {
                res.valid[v * w + u] = 0;
                for (int64_t c = 0; c < 3; ++c) res.normals[(c * h + v) * w + u] = T(0);
                continue;
            }
            const T flip = n[2] > T(0) ? T(-1) : T(1);
            for (int64_t c = 0; c < 3; ++c)
                res.normals[(c * h + v) * w + u] = flip * n[c] / norm;
            res.valid[v * w + u] = 1;
        }
    }
    return res;
}

template TensorT<float> depth_to_points(const TensorT<float>&, const PinholeCamera&);
template TensorT<double> depth_to_points(const TensorT<double>&, const PinholeCamera&);
template NormalsResult<float> normals_from_points(const TensorT<float>&);
template NormalsResult<double> normals_from_points(const TensorT<double>&);

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

namespace {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalize(Vec3 a) {
    const double n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

struct Pose {
    double yaw = 0;      // rotation about the y axis, camera-to-world
    Vec3 origin;

    Vec3 rotate(Vec3 v) const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
    }
    Vec3 rotate_inv(Vec3 v) const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        return {c * v.x - s * v.z, v.y, s * v.x + c * v.z};
    }
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal;  // world frame, any orientation
    bool ok = false;
};

constexpr double kNear = 0.05;
constexpr double kFar = 100.0;

void consider(Hit& best, double t, Vec3 n) {
    if (t > kNear && t < best.t) {
        best.t = t;
        best.normal = n;
        best.ok = true;
    }
}

void intersect_plane(Hit& best, Vec3 o, Vec3 d, Vec3 n, double offset) {
    const double denom = dot(n, d);
    if (std::abs(denom) < 1e-12) return;
    consider(best, (offset - dot(n, o)) / denom, n);
}

void intersect_sphere(Hit& best, Vec3 o, Vec3 d, Vec3 c, double r) {
    const Vec3 oc = o - c;
    const double a = dot(d, d);
    const double b = 2.0 * dot(oc, d);
    const double k = dot(oc, oc) - r * r;
    const double disc = b * b - 4.0 * a * k;
    if (disc < 0) return;
    const double sq = std::sqrt(disc);
    for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t > kNear && t < best.t) {
            const Vec3 hit = o + t * d;
            consider(best, t, normalize(hit - c));
        }
    }
}

void intersect_box(Hit& best, Vec3 o, Vec3 d, const Box& box) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    int axis = -1;
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {d.x, d.y, d.z};
    for (int i = 0; i < 3; ++i) {
        if (std::abs(dv[i]) < 1e-12) {
            if (ov[i] < box.lo[i] || ov[i] > box.hi[i]) return;
            continue;
        }
        double t0 = (box.lo[i] - ov[i]) / dv[i];
        double t1 = (box.hi[i] - ov[i]) / dv[i];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis = i;
        }
        tmax = std::min(tmax, t1);
    }
    if (tmin > tmax || tmin <= kNear || axis < 0) return;
    Vec3 n{0, 0, 0};
    if (axis == 0) n.x = dv[0] > 0 ? -1 : 1;
    if (axis == 1) n.y = dv[1] > 0 ? -1 : 1;
    if (axis == 2) n.z = dv[2] > 0 ? -1 : 1;
    consider(best, tmin, n);
}

Hit cast_ray(const SceneSpec& spec, Vec3 o, Vec3 d) {
    Hit best;
    switch (spec.kind) {
        case SceneKind::plane: {
            const Vec3 n = normalize({spec.plane_normal[0], spec.plane_normal[1],
                                      spec.plane_normal[2]});
            intersect_plane(best, o, d, n, spec.plane_offset);
            break;
        }
        case SceneKind::sphere: {
            intersect_sphere(best, o, d, {spec.sphere_center[0], spec.sphere_center[1],
                                          spec.sphere_center[2]}, spec.sphere_radius);
            intersect_plane(best, o, d, {0, 0, 1}, 6.0);  // backdrop
            break;
        }
        case SceneKind::boxes: {
            for (const Box& b : spec.boxes) intersect_box(best, o, d, b);
            intersect_plane(best, o, d, {0, 0, 1}, 6.0);
            break;
        }
    }
    if (best.t > kFar) best.ok = false;
    return best;
}

}  // namespace

std::string scene_kind_name(SceneKind k) {
    switch (k) {
        case SceneKind::plane: return "plane";
        case SceneKind::sphere: return "sphere";
        case SceneKind::boxes: return "boxes";
    }
    throw ShapeError("unknown scene kind");
}

SceneKind scene_kind_from_name(const std::string& name) {
    if (name == "plane") return SceneKind::plane;
    if (name == "sphere") return SceneKind::sphere;
    if (name == "boxes") return SceneKind::boxes;
    throw ShapeError("unknown scene kind: " + name);
}

SynthData synth_scene(const SceneSpec& spec, uint64_t seed) {
    if (spec.frames < 1 || spec.height < 3 || spec.width < 3)
        throw ShapeError("synth_scene: need frames >= 1 and resolution >= 3x3");
    const int n = spec.frames, h = spec.height, w = spec.width;
    const PinholeCamera cam = PinholeCamera::centered(h, w);

    // Random-walk trajectory; frame 0 is the identity pose.
    Rng rng(seed);
    std::vector<Pose> poses(static_cast<size_t>(n));
    for (int f = 1; f < n; ++f) {
        Pose& p = poses[static_cast<size_t>(f)];
        const Pose& prev = poses[static_cast<size_t>(f - 1)];
        p.yaw = prev.yaw + spec.motion * 0.5 * (rng.uniform() - 0.5);
        p.origin = prev.origin + spec.motion * Vec3{rng.uniform() - 0.5,
                                                    rng.uniform() - 0.5,
                                                    rng.uniform() - 0.5};
    }

    SynthData out;
    out.rgb = Tensor({n, 3, h, w});
    out.points = Tensor({n, 3, h, w});
    out.depth = Tensor({n, h, w});
    out.normals = Tensor({n, 3, h, w});
    out.valid = MaskTensor({n, h, w});

    const Vec3 light = normalize({0.4, 0.6, -0.7});
    int64_t valid_total = 0;
    for (int f = 0; f < n; ++f) {
        const Pose& pose = poses[static_cast<size_t>(f)];
        for (int v = 0; v < h; ++v) {
            for (int u = 0; u < w; ++u) {
                const Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
                const Vec3 dir_world = pose.rotate(dir_cam);
                const Hit hit = cast_ray(spec, pose.origin, dir_world);
                const int64_t px = (static_cast<int64_t>(f) * h + v) * w + u;
                if (!hit.ok) {
                    out.valid[px] = 0;
                    continue;
                }
                out.valid[px] = 1;
                ++valid_total;
                const double depth = hit.t;  // dir_cam.z == 1, so t is camera-frame z
                out.depth[px] = static_cast<float>(depth);
                Vec3 n_cam = pose.rotate_inv(hit.normal);
                if (n_cam.z > 0) n_cam = -1.0 * n_cam;
                const int64_t base = static_cast<int64_t>(f) * 3;
                out.points[((base + 0) * h + v) * w + u] = static_cast<float>(depth * dir_cam.x);
                out.points[((base + 1) * h + v) * w + u] = static_cast<float>(depth * dir_cam.y);
                out.points[((base + 2) * h + v) * w + u] = static_cast<float>(depth);
                out.normals[((base + 0) * h + v) * w + u] = static_cast<float>(n_cam.x);
                out.normals[((base + 1) * h + v) * w + u] = static_cast<float>(n_cam.y);
                out.normals[((base + 2) * h + v) * w + u] = static_cast<float>(n_cam.z);

                const double lambert = std::abs(dot(hit.normal, light));
                const double hue = std::min(1.0, depth / 6.0);
                out.rgb[((base + 0) * h + v) * w + u] =
                    static_cast<float>(0.15 + 0.70 * lambert);
                out.rgb[((base + 1) * h + v) * w + u] =
                    static_cast<float>(0.10 + 0.55 * lambert + 0.20 * hue);
                out.rgb[((base + 2) * h + v) * w + u] =
                    static_cast<float>(0.20 + 0.65 * hue);
            }
        }
    }
    if (valid_total * 5 < static_cast<int64_t>(n) * h * w * 4)
        throw ContractError("synth_scene: fewer than 80% valid pixels rendered");
    return out;
}

void SceneSpec::save(const std::string& path) const {
    io::KeyValues kv;
    kv.emplace_back("kind", scene_kind_name(kind));
    kv.emplace_back("frames", std::to_string(frames));
    kv.emplace_back("height", std::to_string(height));
    kv.emplace_back("width", std::to_string(width));
    kv.emplace_back("motion", io::format_double(motion));
    kv.emplace_back("plane_normal", io::format_double(plane_normal[0]) + " " +
                                        io::format_double(plane_normal[1]) + " " +
                                        io::format_double(plane_normal[2]));
    kv.emplace_back("plane_offset", io::format_double(plane_offset));
    kv.emplace_back("sphere_center", io::format_double(sphere_center[0]) + " " +
                                         io::format_double(sphere_center[1]) + " " +
                                         io::format_double(sphere_center[2]));
    kv.emplace_back("sphere_radius", io::format_double(sphere_radius));
    kv.emplace_back("box_count", std::to_string(boxes.size()));
    for (size_t i = 0; i < boxes.size(); ++i) {
        std::string s;
        for (double c : boxes[i].lo) s += io::format_double(c) + " ";
        for (double c : boxes[i].hi) s += io::format_double(c) + " ";
        s.pop_back();
        kv.emplace_back("box_" + std::to_string(i), s);
    }
    io::write_key_values(path, kv);
}

SceneSpec SceneSpec::load(const std::string& path) {
    const io::KeyValues kv = io::read_key_values(path);
    SceneSpec spec;
    spec.kind = scene_kind_from_name(io::lookup(kv, "kind"));
    spec.frames = std::stoi(io::lookup(kv, "frames"));
    spec.height = std::stoi(io::lookup(kv, "height"));
    spec.width = std::stoi(io::lookup(kv, "width"));
    spec.motion = std::stod(io::lookup(kv, "motion"));
    auto parse3 = [](const std::string& s) {
        std::array<double, 3> a{};
        size_t pos = 0;
        for (int i = 0; i < 3; ++i) {
            size_t used = 0;
            a[static_cast<size_t>(i)] = std::stod(s.substr(pos), &used);
            pos += used;
        }
        return a;
    };
    spec.plane_normal = parse3(io::lookup(kv, "plane_normal"));
    spec.plane_offset = std::stod(io::lookup(kv, "plane_offset"));
    spec.sphere_center = parse3(io::lookup(kv, "sphere_center"));
    spec.sphere_radius = std::stod(io::lookup(kv, "sphere_radius"));
    spec.boxes.clear();
    const int nb = std::stoi(io::lookup(kv, "box_count"));
    for (int i = 0; i < nb; ++i) {
        const std::string s = io::lookup(kv, "box_" + std::to_string(i));
        Box b;
        size_t pos = 0, used = 0;
        for (int c = 0; c < 3; ++c) {
            b.lo[static_cast<size_t>(c)] = std::stod(s.substr(pos), &used);
            pos += used;
        }
        for (int c = 0; c < 3; ++c) {
            b.hi[static_cast<size_t>(c)] = std::stod(s.substr(pos), &used);
            pos += used;
        }
        spec.boxes.push_back(b);
    }
    return spec;
}

void save_dataset(const std::string& dir, const SynthData& data) {
    std::filesystem::create_directories(dir);
    io::write_tensor(dir + "/rgb.vgeo", data.rgb);
    io::write_tensor(dir + "/points.vgeo", data.points);
    io::write_tensor(dir + "/depth.vgeo", data.depth);
    io::write_tensor(dir + "/normals.vgeo", data.normals);
    io::write_tensor(dir + "/valid.vgeo", data.valid);
}

SynthData load_dataset(const std::string& dir) {
    SynthData d;
    d.rgb = io::read_tensor_f32(dir + "/rgb.vgeo");
    d.points = io::read_tensor_f32(dir + "/points.vgeo");
    d.depth = io::read_tensor_f32(dir + "/depth.vgeo");
    d.normals = io::read_tensor_f32(dir + "/normals.vgeo");
    d.valid = io::read_mask(dir + "/valid.vgeo");
    return d;
}

}  // namespace vigeo::geom
