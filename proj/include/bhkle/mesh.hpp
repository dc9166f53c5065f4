#ifndef BHKLE_MESH_HPP
#define BHKLE_MESH_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bhkle {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Region tags as written to mesh files.
enum class Region : int {
    Iron = 1,
    Air = 2,
    Gap = 3, // air between the pole faces, where probes live
    CoilPositive = 4,
    CoilNegative = 5,
};

bool is_valid_region(int tag);
std::string region_name(Region r);

struct Box {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    bool contains(Point p, double tol = 0.0) const {
        return p.x >= x0 - tol && p.x <= x1 + tol && p.y >= y0 - tol && p.y <= y1 + tol;
    }
    double area() const { return (x1 - x0) * (y1 - y0); }
    // Euclidean distance from p to the box (0 inside).
    double distance(Point p) const;
};

struct Block {
    std::string name;
    Region region;
    Box box;
};

// Cross-section of an H-shaped dipole centred at the origin, symmetric
// about both axes. Lengths in metres.
struct DipoleGeometry {
    double gap_height = 0.068;  // pole face to pole face
    double pole_width = 0.24;
    double pole_height = 0.10;
    double shim_width = 0.012;  // step at each pole edge, protruding into the gap
    double shim_height = 0.002;
    double window_width = 0.16; // pole edge to return leg
    double coil_clearance = 0.01;
    double leg_thickness = 0.14;
    double yoke_thickness = 0.14;
    double air_margin = 0.12;
    int turns = 180;
    // Gap height quoted for the reference magnet; carried as metadata only.
    double reference_gap_height_mm = 680.0;

    // Target element edge lengths: fine around the gap and shims, coarse
    // in the yoke bulk and the surrounding air.
    double fine_size = 0.006;
    double coarse_size = 0.03;

    void validate() const;

    Box outer() const;
    Box gap() const;
    // Air between the pole faces including the space beside the shims.
    std::vector<Box> shims() const;
    // Blocks in paint order; later blocks override earlier ones.
    std::vector<Block> blocks() const;
    // Inside the gap and outside every shim.
    bool in_gap_air(Point p) const;
    double distance_to_shim(Point p) const;
    double domain_area() const { return outer().area(); }

    bool operator==(const DipoleGeometry&) const = default;
};

struct Triangle {
    std::array<int, 3> nodes{};
    Region region = Region::Air;
};

class Mesh {
public:
    std::vector<Point> nodes;
    std::vector<Triangle> triangles;
    std::vector<std::uint8_t> boundary; // 1 on the outer boundary

    double area(std::size_t e) const;
    Point centroid(std::size_t e) const;
    double total_area() const;
    double region_area(Region r) const;
    std::size_t count(Region r) const;

    // Throws GeometryError on inverted triangles, bad indices or tags.
    void validate() const;

    // For each triangle, the triangle across each edge (edge k is opposite
    // node k), or -1 on the boundary.
    std::vector<std::array<int, 3>> edge_neighbors() const;

    // First triangle containing p (barycentric tolerance tol).
    std::optional<std::size_t> locate(Point p, double tol = 1e-12) const;
};

// Structured-block triangulation: the tensor grid of all block edges is
// subdivided to the target sizes (times 2^refinement) and every cell split
// along a diagonal mirrored across both axes.
Mesh generate_dipole_mesh(const DipoleGeometry& geometry, int refinement = 0);

// Plain-text mesh file:
//   nodes <N>            then N lines `id x y`
//   elements <E>         then E lines `id n1 n2 n3 region`
//   boundary <B>         then B lines `id`
void write_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_mesh(const std::filesystem::path& path);

} // namespace bhkle

#endif // BHKLE_MESH_HPP
