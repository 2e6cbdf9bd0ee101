#include "bags/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bags {
namespace {

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

std::size_t type_size(const std::string& t) {
  static const std::map<std::string, std::size_t> sizes{
      {"char", 1},   {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},  {"ushort", 2},
      {"int16", 2},  {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},  {"uint32", 4},
      {"float", 4},  {"float32", 4}, {"double", 8}, {"float64", 8}};
  auto it = sizes.find(t);
  if (it == sizes.end()) throw std::runtime_error("PLY: unsupported property type '" + t + "'");
  return it->second;
}

bool is_integer_type(const std::string& t) {
  return t != "float" && t != "float32" && t != "double" && t != "float64";
}

template <typename T>
T load_le(const char* p) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double decode(const std::string& t, const char* p) {
  if (t == "char" || t == "int8") return load_le<std::int8_t>(p);
  if (t == "uchar" || t == "uint8") return load_le<std::uint8_t>(p);
  if (t == "short" || t == "int16") return load_le<std::int16_t>(p);
  if (t == "ushort" || t == "uint16") return load_le<std::uint16_t>(p);
  if (t == "int" || t == "int32") return load_le<std::int32_t>(p);
  if (t == "uint" || t == "uint32") return load_le<std::uint32_t>(p);
  if (t == "float" || t == "float32") return load_le<float>(p);
  return load_le<double>(p);
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("PLY: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw std::runtime_error("PLY: " + path.string() + " lacks the 'ply' magic");

  std::string format;
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      ls >> format;
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw std::runtime_error("PLY: property before any element in " + path.string());
      Property p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.type = count_type + ":" + item_type;
      } else {
        p.type = type;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (word == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian") {
    throw std::runtime_error("PLY: unsupported format '" + format + "' in " + path.string());
  }

  PointCloud cloud;
  for (const Element& e : elements) {
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < e.props.size(); ++i) col[e.props[i].name] = i;
    const bool is_vertex = e.name == "vertex";
    if (is_vertex && (!col.count("x") || !col.count("y") || !col.count("z"))) {
      throw std::runtime_error("PLY: vertex element lacks x/y/z in " + path.string());
    }
    const bool has_color = is_vertex && col.count("red") && col.count("green") && col.count("blue");
    double color_scale = 1.0;
    if (has_color && is_integer_type(e.props[col["red"]].type)) color_scale = 1.0 / 255.0;

    std::vector<double> values(e.props.size());
    for (std::size_t r = 0; r < e.count; ++r) {
      if (format == "ascii") {
        if (!std::getline(in, line)) throw std::runtime_error("PLY: truncated ascii body in " + path.string());
        std::istringstream ls(line);
        for (std::size_t i = 0; i < e.props.size(); ++i) {
          if (e.props[i].is_list) {
            std::size_t n = 0;
            ls >> n;
            double skip;
            for (std::size_t k = 0; k < n; ++k) ls >> skip;
            values[i] = 0;
          } else {
            ls >> values[i];
          }
        }
        if (!ls) throw std::runtime_error("PLY: malformed ascii row in " + path.string());
      } else {
        for (std::size_t i = 0; i < e.props.size(); ++i) {
          const Property& p = e.props[i];
          if (p.is_list) {
            const std::string count_type = p.type.substr(0, p.type.find(':'));
            const std::string item_type = p.type.substr(p.type.find(':') + 1);
            char buf[8];
            in.read(buf, static_cast<std::streamsize>(type_size(count_type)));
            const auto n = static_cast<std::size_t>(decode(count_type, buf));
            in.ignore(static_cast<std::streamsize>(n * type_size(item_type)));
            values[i] = 0;
          } else {
            char buf[8];
            in.read(buf, static_cast<std::streamsize>(type_size(p.type)));
            values[i] = decode(p.type, buf);
          }
        }
        if (!in) throw std::runtime_error("PLY: truncated binary body in " + path.string());
      }
      if (is_vertex) {
        cloud.points.emplace_back(values[col["x"]], values[col["y"]], values[col["z"]]);
        if (has_color) {
          cloud.colors.emplace_back(values[col["red"]] * color_scale, values[col["green"]] * color_scale,
                                    values[col["blue"]] * color_scale);
        } else {
          cloud.colors.emplace_back(0.5, 0.5, 0.5);
        }
      }
    }
  }
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  if (cloud.colors.size() != cloud.points.size()) throw std::invalid_argument("write_ply: colors/points size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("PLY: cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const float v = static_cast<float>(cloud.points[i][a]);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
    for (int a = 0; a < 3; ++a) {
      const auto c = static_cast<std::uint8_t>(std::lround(std::clamp(cloud.colors[i][a], 0.0, 1.0) * 255.0));
      out.write(reinterpret_cast<const char*>(&c), 1);
    }
  }
}

}  // namespace bags
