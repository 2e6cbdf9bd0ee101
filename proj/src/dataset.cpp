#include "bags/dataset.hpp"

#include "bags/image_io.hpp"

#include "json.hpp"

#include <fstream>
#include <stdexcept>

namespace bags {

using nlohmann::json;

std::vector<Camera> read_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open camera file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw std::runtime_error(path.string() + ": expected a JSON array of cameras");
  std::vector<Camera> cams;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& j = doc[i];
    const std::string where = path.string() + "[" + std::to_string(i) + "]";
    auto need = [&](const char* key) -> const json& {
      if (!j.contains(key)) throw std::runtime_error(where + ": missing field '" + key + "'");
      return j.at(key);
    };
    try {
      Camera c;
      const auto& rot = need("rotation");
      const auto& tr = need("translation");
      if (!rot.is_array() || rot.size() != 9) throw std::runtime_error(where + ": 'rotation' needs 9 numbers");
      if (!tr.is_array() || tr.size() != 3) throw std::runtime_error(where + ": 'translation' needs 3 numbers");
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[static_cast<std::size_t>(3 * r + k)].get<double>();
        c.translation[r] = tr[static_cast<std::size_t>(r)].get<double>();
      }
      c.fx = need("fx").get<double>();
      c.fy = need("fy").get<double>();
      c.cx = need("cx").get<double>();
      c.cy = need("cy").get<double>();
      c.width = need("width").get<int>();
      c.height = need("height").get<int>();
      c.image_path = need("image_path").get<std::string>();
      c.validate();
      cams.push_back(c);
    } catch (const json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return cams;
}

void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cameras) {
  json doc = json::array();
  for (const Camera& c : cameras) {
    json j;
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) rot[static_cast<std::size_t>(3 * r + k)] = c.rotation(r, k);
    }
    j["rotation"] = rot;
    j["translation"] = {c.translation.x(), c.translation.y(), c.translation.z()};
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["image_path"] = c.image_path;
    doc.push_back(j);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& root, bool load_train_images, bool load_test_images) {
  Dataset ds;
  ds.root = root;
  if (!std::filesystem::is_directory(root)) throw std::runtime_error("dataset directory " + root.string() + " not found");
  for (Camera& c : read_cameras(root / "cameras.json")) {
    const bool test = c.image_path.rfind("test/", 0) == 0;
    auto& split = test ? ds.test_cameras : ds.train_cameras;
    c.view_index = static_cast<int>(split.size());
    split.push_back(c);
  }
  const auto ply = root / "points.ply";
  if (std::filesystem::exists(ply)) ds.points = read_ply(ply);

  auto load = [&](const std::vector<Camera>& cams, std::vector<Tensor>& out) {
    for (const Camera& c : cams) {
      const auto file = root / c.image_path;
      if (!std::filesystem::exists(file)) throw std::runtime_error("missing image " + file.string());
      Tensor img = read_png(file);
      if (img.size(1) != static_cast<std::size_t>(c.height) || img.size(2) != static_cast<std::size_t>(c.width)) {
        throw std::runtime_error(file.string() + ": image is " + std::to_string(img.size(2)) + "x" +
                                 std::to_string(img.size(1)) + " but its camera says " +
                                 std::to_string(c.width) + "x" + std::to_string(c.height));
      }
      out.push_back(std::move(img));
    }
  };
  if (load_train_images) load(ds.train_cameras, ds.train_images);
  if (load_test_images) load(ds.test_cameras, ds.test_images);
  return ds;
}

}  // namespace bags
