#include "omnifit/mesh_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace omnifit {

namespace {

std::string extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

enum class PlyFormat { Ascii, BinaryLE, BinaryBE };

struct PlyProperty {
    std::string name;
    std::string type;        // scalar type, or list item type
    std::string count_type;  // non-empty for lists
};

struct PlyElement {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> props;
};

size_t type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    throw FormatError("ply: unknown property type '" + t + "'");
}

double read_binary(std::istream& in, const std::string& t, bool big_endian) {
    unsigned char buf[8];
    const size_t n = type_size(t);
    if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) throw FormatError("ply: truncated binary data");
    if (big_endian) std::reverse(buf, buf + n);
    if (t == "char" || t == "int8") return static_cast<int8_t>(buf[0]);
    if (t == "uchar" || t == "uint8") return buf[0];
    if (t == "short" || t == "int16") { int16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "ushort" || t == "uint16") { uint16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "int" || t == "int32") { int32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "uint" || t == "uint32") { uint32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "float" || t == "float32") { float v; std::memcpy(&v, buf, 4); return v; }
    double v;
    std::memcpy(&v, buf, 8);
    return v;
}

struct PlyData {
    Points vertices;
    std::vector<std::vector<int>> polygons;
};

PlyData read_ply(std::istream& in, bool want_faces) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw FormatError("ply: missing magic");
    PlyFormat format = PlyFormat::Ascii;
    std::vector<PlyElement> elements;
    bool saw_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "format") {
            std::string f;
            ls >> f;
            if (f == "ascii") format = PlyFormat::Ascii;
            else if (f == "binary_little_endian") format = PlyFormat::BinaryLE;
            else if (f == "binary_big_endian") format = PlyFormat::BinaryBE;
            else throw FormatError("ply: unknown format '" + f + "'");
            saw_format = true;
        } else if (kw == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty()) throw FormatError("ply: property before element");
            PlyProperty p;
            std::string t;
            ls >> t;
            if (t == "list") {
                ls >> p.count_type >> p.type >> p.name;
            } else {
                p.type = t;
                ls >> p.name;
            }
            elements.back().props.push_back(p);
        } else if (kw == "end_header") {
            break;
        }
    }
    if (!saw_format) throw FormatError("ply: missing format line");

    PlyData data;
    for (const auto& e : elements) {
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        int ix = -1, iy = -1, iz = -1, ilist = -1;
        for (size_t k = 0; k < e.props.size(); ++k) {
            const auto& p = e.props[k];
            if (p.name == "x") ix = static_cast<int>(k);
            if (p.name == "y") iy = static_cast<int>(k);
            if (p.name == "z") iz = static_cast<int>(k);
            if (!p.count_type.empty() && (p.name == "vertex_indices" || p.name == "vertex_index")) ilist = static_cast<int>(k);
        }
        if (is_vertex) {
            if (ix < 0 || iy < 0 || iz < 0) throw FormatError("ply: vertex element lacks x/y/z");
            data.vertices.resize(static_cast<Eigen::Index>(e.count), 3);
        }
        for (size_t r = 0; r < e.count; ++r) {
            std::istringstream row;
            if (format == PlyFormat::Ascii) {
                if (!std::getline(in, line)) throw FormatError("ply: truncated ascii data in element '" + e.name + "'");
                row.str(line);
            }
            auto scalar = [&](const std::string& t) {
                if (format == PlyFormat::Ascii) {
                    double v;
                    if (!(row >> v)) throw FormatError("ply: malformed ascii row in element '" + e.name + "'");
                    return v;
                }
                return read_binary(in, t, format == PlyFormat::BinaryBE);
            };
            for (size_t k = 0; k < e.props.size(); ++k) {
                const auto& p = e.props[k];
                if (p.count_type.empty()) {
                    const double v = scalar(p.type);
                    if (is_vertex) {
                        const auto ri = static_cast<Eigen::Index>(r);
                        if (static_cast<int>(k) == ix) data.vertices(ri, 0) = v;
                        if (static_cast<int>(k) == iy) data.vertices(ri, 1) = v;
                        if (static_cast<int>(k) == iz) data.vertices(ri, 2) = v;
                    }
                } else {
                    const int count = static_cast<int>(scalar(p.count_type));
                    std::vector<int> poly;
                    for (int c = 0; c < count; ++c) poly.push_back(static_cast<int>(scalar(p.type)));
                    if (is_face && want_faces && static_cast<int>(k) == ilist) data.polygons.push_back(std::move(poly));
                }
            }
        }
    }
    return data;
}

Faces triangulate(const std::vector<std::vector<int>>& polygons) {
    std::vector<Eigen::Vector3i> tris;
    for (const auto& p : polygons) {
        for (size_t i = 1; i + 1 < p.size(); ++i) tris.emplace_back(p[0], p[i], p[i + 1]);
    }
    Faces f(static_cast<Eigen::Index>(tris.size()), 3);
    for (size_t i = 0; i < tris.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = tris[i].transpose();
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(17);
    return out;
}

Points read_obj_vertices(std::istream& in, std::vector<std::vector<int>>* polygons) {
    std::vector<Eigen::Vector3d> verts;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "v") {
            Eigen::Vector3d p;
            if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError("obj: bad vertex on line " + std::to_string(lineno));
            verts.push_back(p);
        } else if (kw == "f" && polygons) {
            std::vector<int> poly;
            std::string tok;
            while (ls >> tok) {
                const int idx = std::stoi(tok.substr(0, tok.find('/')));
                const int resolved = idx < 0 ? static_cast<int>(verts.size()) + idx : idx - 1;
                poly.push_back(resolved);
            }
            if (poly.size() < 3) throw FormatError("obj: face with fewer than 3 vertices on line " + std::to_string(lineno));
            polygons->push_back(std::move(poly));
        }
    }
    Points out(static_cast<Eigen::Index>(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
    return out;
}

}  // namespace

TriMesh read_ply_mesh(std::istream& in) {
    auto data = read_ply(in, true);
    TriMesh mesh{std::move(data.vertices), triangulate(data.polygons)};
    mesh.validate();
    return mesh;
}

TriMesh read_obj_mesh(std::istream& in) {
    std::vector<std::vector<int>> polygons;
    TriMesh mesh;
    mesh.vertices = read_obj_vertices(in, &polygons);
    mesh.faces = triangulate(polygons);
    mesh.validate();
    return mesh;
}

TriMesh load_mesh(const std::string& path) {
    auto in = open_in(path);
    const auto ext = extension(path);
    try {
        if (ext == "ply") return read_ply_mesh(in);
        if (ext == "obj") return read_obj_mesh(in);
    } catch (const std::exception& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
    throw FormatError("'" + path + "': unsupported mesh extension '." + ext + "'");
}

void write_ply(std::ostream& out, const Points& vertices, const Faces* faces, bool binary) {
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    out << "element vertex " << vertices.rows() << "\nproperty double x\nproperty double y\nproperty double z\n";
    if (faces) out << "element face " << faces->rows() << "\nproperty list uchar int vertex_indices\n";
    out << "end_header\n";
    static_assert(std::endian::native == std::endian::little);
    for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
        if (binary) {
            for (int d = 0; d < 3; ++d) {
                const double v = vertices(i, d);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
        } else {
            out << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
        }
    }
    if (!faces) return;
    for (Eigen::Index f = 0; f < faces->rows(); ++f) {
        if (binary) {
            const unsigned char n = 3;
            out.write(reinterpret_cast<const char*>(&n), 1);
            for (int d = 0; d < 3; ++d) {
                const int32_t v = (*faces)(f, d);
                out.write(reinterpret_cast<const char*>(&v), 4);
            }
        } else {
            out << "3 " << (*faces)(f, 0) << ' ' << (*faces)(f, 1) << ' ' << (*faces)(f, 2) << '\n';
        }
    }
}

void write_obj(std::ostream& out, const TriMesh& mesh) {
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
        out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
        out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
}

void save_mesh(const std::string& path, const TriMesh& mesh) {
    auto out = open_out(path);
    const auto ext = extension(path);
    if (ext == "ply") write_ply(out, mesh.vertices, &mesh.faces, true);
    else if (ext == "obj") write_obj(out, mesh);
    else throw FormatError("'" + path + "': unsupported mesh extension '." + ext + "'");
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

PointCloud load_point_cloud(const std::string& path) {
    auto in = open_in(path);
    const auto ext = extension(path);
    PointCloud cloud;
    try {
        if (ext == "ply") {
            cloud.points = read_ply(in, false).vertices;
        } else if (ext == "obj") {
            cloud.points = read_obj_vertices(in, nullptr);
        } else if (ext == "xyz" || ext == "txt") {
            std::vector<Eigen::Vector3d> pts;
            std::string line;
            int lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
                std::istringstream ls(line);
                Eigen::Vector3d p;
                if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError("bad point on line " + std::to_string(lineno));
                pts.push_back(p);
            }
            cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
            for (size_t i = 0; i < pts.size(); ++i) cloud.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
        } else {
            throw FormatError("unsupported point cloud extension '." + ext + "'");
        }
        cloud.validate();
    } catch (const std::exception& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
    return cloud;
}

void save_point_cloud(const std::string& path, const PointCloud& cloud) {
    auto out = open_out(path);
    const auto ext = extension(path);
    if (ext == "ply") {
        write_ply(out, cloud.points, nullptr, true);
    } else if (ext == "xyz" || ext == "txt") {
        for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
            out << cloud.points(i, 0) << ' ' << cloud.points(i, 1) << ' ' << cloud.points(i, 2) << '\n';
    } else {
        throw FormatError("'" + path + "': unsupported point cloud extension '." + ext + "'");
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace omnifit
