#pragma once

#include "hug/scene.hpp"

#include <filesystem>

namespace hug {

/// Loads cameras.txt, images.txt and points3D.txt from `directory`. Only the
/// PINHOLE and SIMPLE_PINHOLE camera models are accepted. When
/// `image_root` is non-empty, each view's image named in images.txt is loaded
/// from it if the file exists.
SceneBundle load_colmap_text(const std::filesystem::path& directory, const std::filesystem::path& image_root = {});

/// Writes the bundle in COLMAP text format (one PINHOLE camera per view).
/// POINTS2D lines carry the reprojection of each tracked point.
void write_colmap_text(const SceneBundle& bundle, const std::filesystem::path& directory);

}  // namespace hug
