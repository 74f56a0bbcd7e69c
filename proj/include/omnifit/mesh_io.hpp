#pragma once

#include <string>

#include "omnifit/geometry.hpp"

namespace omnifit {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// PLY (ascii, binary little/big endian) or OBJ, chosen by extension.
// Polygons are fan-triangulated; attributes other than positions are ignored.
TriMesh load_mesh(const std::string& path);
TriMesh read_ply_mesh(std::istream& in);
TriMesh read_obj_mesh(std::istream& in);

// .ply is written binary little endian, .obj as text.
void save_mesh(const std::string& path, const TriMesh& mesh);
void write_ply(std::ostream& out, const Points& vertices, const Faces* faces, bool binary);
void write_obj(std::ostream& out, const TriMesh& mesh);

// .ply (vertices only are read), .xyz/.txt (whitespace x y z per line), or
// .obj (vertex positions).
PointCloud load_point_cloud(const std::string& path);
void save_point_cloud(const std::string& path, const PointCloud& cloud);

}  // namespace omnifit
