#pragma once

#include <array>
#include <string>
#include <vector>

#include "vigeo/tensor.hpp"

namespace vigeo::geom {

struct PinholeCamera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

    // Centered camera with a ~53 degree vertical field of view.
    static PinholeCamera centered(int height, int width) {
        PinholeCamera c;
        c.fx = c.fy = static_cast<double>(std::max(height, width));
        c.cx = (width - 1) / 2.0;
        c.cy = (height - 1) / 2.0;
        return c;
    }
};

// P(u,v) = D(u,v) * ((u-cx)/fx, (v-cy)/fy, 1). depth [H x W] -> points [3 x H x W].
template <class T>
TensorT<T> depth_to_points(const TensorT<T>& depth, const PinholeCamera& cam);

// Central-difference tangents (one-sided at borders), normal = normalize(t_u x t_v)
// oriented so the z component is <= 0. Zero cross products are reported invalid.
// points [3 x H x W] -> normals [3 x H x W] + validity [H x W].
template <class T>
struct NormalsResult {
    TensorT<T> normals;
    MaskTensor valid;
};

template <class T>
NormalsResult<T> normals_from_points(const TensorT<T>& points);

enum class SceneKind { plane, sphere, boxes };

std::string scene_kind_name(SceneKind k);
SceneKind scene_kind_from_name(const std::string& name);

struct Box {
    std::array<double, 3> lo{};
    std::array<double, 3> hi{};
};

// Analytic scenes in camera-start coordinates. Every scene keeps a backdrop
// plane so all frames render fully valid.
struct SceneSpec {
    SceneKind kind = SceneKind::plane;
    int frames = 4;
    int height = 16;
    int width = 16;

    // plane: unit normal + offset (n . x = offset)
    std::array<double, 3> plane_normal{0.25, 0.10, -1.0};
    double plane_offset = -3.0;

    // sphere: center + radius, rendered in front of the backdrop
    std::array<double, 3> sphere_center{0.0, 0.0, 3.0};
    double sphere_radius = 1.4;

    // boxes: axis-aligned, in front of the backdrop
    std::vector<Box> boxes{
        {{-1.4, -1.2, 2.2}, {-0.2, 0.4, 3.2}},
        {{0.3, -0.2, 2.6}, {1.5, 1.0, 3.6}},
    };

    // camera trajectory scale (per-frame translation and yaw drawn from seed)
    double motion = 0.08;

    void save(const std::string& path) const;
    static SceneSpec load(const std::string& path);
};

struct SynthData {
    Tensor rgb;       // [N x 3 x H x W]
    Tensor points;    // [N x 3 x H x W], camera frame
    Tensor depth;     // [N x H x W]
    Tensor normals;   // [N x 3 x H x W], unit, z <= 0
    MaskTensor valid; // [N x H x W]
};

// Ray-cast render with exact 64-bit ground truth. RGB is Lambertian shading
// of the normals plus a depth-keyed hue so images carry geometric signal.
SynthData synth_scene(const SceneSpec& spec, uint64_t seed);

void save_dataset(const std::string& dir, const SynthData& data);
SynthData load_dataset(const std::string& dir);

}  // namespace vigeo::geom
