#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpa/camera.hpp"
#include "dpa/image.hpp"
#include "dpa/png_io.hpp"

// On-disk datasets: images/NNN.png, masks/NNN.png, cameras.json (intrinsics
// plus row-major 4x4 world-to-camera per view), optional meta.json. Loading
// runs every pre-flight check before any compute touches the data.

namespace dpa {

struct Dataset {
  std::vector<Camera> cameras;
  std::vector<Image> images;
  std::vector<Mask> masks;
  nlohmann::json meta;  // null when meta.json is absent

  Index view_count() const { return Index(cameras.size()); }
};

inline std::string view_name(Index i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(i));
  return buf;
}

namespace detail {

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  std::vector<double> m;
  m.reserve(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(cam.world_to_camera(r, c));
  j["world_to_camera"] = m;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j, const std::string& where) {
  for (const char* key : {"fx", "fy", "cx", "cy", "width", "height", "world_to_camera"})
    if (!j.contains(key))
      throw ValidationError(where + ": camera entry is missing '" + key + "'");
  Camera cam;
  cam.fx = j["fx"].get<double>();
  cam.fy = j["fy"].get<double>();
  cam.cx = j["cx"].get<double>();
  cam.cy = j["cy"].get<double>();
  cam.width = j["width"].get<Index>();
  cam.height = j["height"].get<Index>();
  const auto& m = j["world_to_camera"];
  if (!m.is_array() || m.size() != 16)
    throw ValidationError(where + ": world_to_camera must hold 16 numbers");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = m[4 * r + c].get<double>();
  return cam;
}

}  // namespace detail

inline void write_dataset(const std::string& dir, const std::vector<Camera>& cameras,
                          const std::vector<Image>& images, const std::vector<Mask>& masks,
                          const nlohmann::json& meta = {}) {
  if (cameras.size() != images.size() || cameras.size() != masks.size())
    throw ValidationError("write_dataset: view counts disagree");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw ValidationError("write_dataset: cannot create " + dir);

  nlohmann::json views = nlohmann::json::array();
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    cameras[i].validate();
    const std::string name = view_name(Index(i)) + ".png";
    write_png((fs::path(dir) / "images" / name).string(), images[i]);
    write_png_gray((fs::path(dir) / "masks" / name).string(), masks[i]);
    views.push_back(detail::camera_to_json(cameras[i]));
  }
  std::ofstream cams((fs::path(dir) / "cameras.json").string());
  if (!cams) throw ValidationError("write_dataset: cannot write cameras.json in " + dir);
  cams << views.dump(2) << "\n";
  if (!meta.is_null()) {
    std::ofstream m((fs::path(dir) / "meta.json").string());
    m << meta.dump(2) << "\n";
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw ValidationError("load_dataset: " + dir + " is not a directory");
  const std::string cams_path = (fs::path(dir) / "cameras.json").string();
  std::ifstream in(cams_path);
  if (!in) throw ValidationError("load_dataset: missing " + cams_path);
  nlohmann::json views;
  try {
    in >> views;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("load_dataset: " + cams_path + ": " + e.what());
  }
  if (!views.is_array() || views.empty())
    throw ValidationError("load_dataset: " + cams_path + " must hold a non-empty array");

  Dataset data;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string where = "view " + std::to_string(i);
    Camera cam = detail::camera_from_json(views[i], where);
    try {
      cam.validate();
    } catch (const Error& e) {
      throw ValidationError("load_dataset: " + where + ": " + e.what());
    }

    const std::string name = view_name(Index(i)) + ".png";
    const std::string image_path = (fs::path(dir) / "images" / name).string();
    const std::string mask_path = (fs::path(dir) / "masks" / name).string();
    if (!fs::exists(image_path))
      throw ValidationError("load_dataset: " + where + ": missing image " + image_path);
    if (!fs::exists(mask_path))
      throw ValidationError("load_dataset: " + where + ": missing mask " + mask_path);

    Image image = read_png(image_path);
    Mask mask = read_png_mask(mask_path);
    if (image.width != cam.width || image.height != cam.height)
      throw ValidationError("load_dataset: " + where +
                            ": image size does not match the camera raster");
    if (mask.rows() != image.height || mask.cols() != image.width)
      throw ValidationError("load_dataset: " + where +
                            ": mask size does not match the image");

    data.cameras.push_back(std::move(cam));
    data.images.push_back(std::move(image));
    data.masks.push_back(std::move(mask));
  }

  const std::string meta_path = (fs::path(dir) / "meta.json").string();
  if (fs::exists(meta_path)) {
    std::ifstream m(meta_path);
    try {
      m >> data.meta;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("load_dataset: " + meta_path + ": " + e.what());
    }
  }
  return data;
}

}  // namespace dpa
