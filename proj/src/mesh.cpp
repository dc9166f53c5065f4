#include "bhkle/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "bhkle/errors.hpp"
#include "text_util.hpp"

namespace bhkle {

bool is_valid_region(int tag) { return tag >= 1 && tag <= 5; }

std::string region_name(Region r) {
    switch (r) {
    case Region::Iron: return "iron";
    case Region::Air: return "air";
    case Region::Gap: return "gap";
    case Region::CoilPositive: return "coil+";
    case Region::CoilNegative: return "coil-";
    }
    return "unknown";
}

double Box::distance(Point p) const {
    const double dx = std::max({x0 - p.x, 0.0, p.x - x1});
    const double dy = std::max({y0 - p.y, 0.0, p.y - y1});
    return std::hypot(dx, dy);
}

// ---------------------------------------------------------------------------
// DipoleGeometry

void DipoleGeometry::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw GeometryError(std::string("degenerate geometry: ") + what);
    };
    require(gap_height > 0.0, "gap height must be positive");
    require(pole_width > 0.0 && pole_height > 0.0, "pole dimensions must be positive");
    require(shim_width >= 0.0 && shim_height >= 0.0, "shim dimensions must be nonnegative");
    require(shim_width < pole_width / 2, "shims overlap at the pole centre");
    require(shim_height < gap_height / 2, "shims close the gap");
    require(window_width > 0.0 && leg_thickness > 0.0 && yoke_thickness > 0.0,
            "window, leg and yoke must have positive size");
    require(coil_clearance > 0.0, "coil clearance must be positive");
    require(2 * coil_clearance < window_width, "coil does not fit the window width");
    require(2 * coil_clearance < pole_height, "coil does not fit the window height");
    require(air_margin > 0.0, "air margin must be positive");
    require(turns > 0, "turn count must be positive");
    require(fine_size > 0.0 && coarse_size >= fine_size, "mesh sizes must satisfy 0 < fine <= coarse");
}

Box DipoleGeometry::outer() const {
    const double half_w = pole_width / 2 + window_width + leg_thickness + air_margin;
    const double half_h = gap_height / 2 + pole_height + yoke_thickness + air_margin;
    return {-half_w, -half_h, half_w, half_h};
}

Box DipoleGeometry::gap() const {
    return {-pole_width / 2, -gap_height / 2, pole_width / 2, gap_height / 2};
}

std::vector<Box> DipoleGeometry::shims() const {
    std::vector<Box> out;
    if (shim_width <= 0.0 || shim_height <= 0.0) return out;
    const double xe = pole_width / 2, xi = pole_width / 2 - shim_width;
    const double yf = gap_height / 2, yt = gap_height / 2 - shim_height;
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) {
            Box b{std::min(sx * xi, sx * xe), std::min(sy * yt, sy * yf),
                  std::max(sx * xi, sx * xe), std::max(sy * yt, sy * yf)};
            out.push_back(b);
        }
    return out;
}

std::vector<Block> DipoleGeometry::blocks() const {
    const double hp = pole_width / 2;
    const double hg = gap_height / 2;
    const double leg_in = hp + window_width;
    const double leg_out = leg_in + leg_thickness;
    const double yoke_in = hg + pole_height;
    const double yoke_out = yoke_in + yoke_thickness;

    std::vector<Block> b;
    b.push_back({"yoke_top", Region::Iron, {-leg_out, yoke_in, leg_out, yoke_out}});
    b.push_back({"yoke_bottom", Region::Iron, {-leg_out, -yoke_out, leg_out, -yoke_in}});
    b.push_back({"leg_right", Region::Iron, {leg_in, -yoke_in, leg_out, yoke_in}});
    b.push_back({"leg_left", Region::Iron, {-leg_out, -yoke_in, -leg_in, yoke_in}});
    b.push_back({"pole_top", Region::Iron, {-hp, hg, hp, yoke_in}});
    b.push_back({"pole_bottom", Region::Iron, {-hp, -yoke_in, hp, -hg}});
    b.push_back({"gap", Region::Gap, gap()});
    int k = 0;
    for (const auto& s : shims()) b.push_back({"shim_" + std::to_string(++k), Region::Iron, s});

    const double cx0 = hp + coil_clearance, cx1 = leg_in - coil_clearance;
    const double cy0 = hg + coil_clearance, cy1 = yoke_in - coil_clearance;
    b.push_back({"coil_right_top", Region::CoilNegative, {cx0, cy0, cx1, cy1}});
    b.push_back({"coil_right_bottom", Region::CoilNegative, {cx0, -cy1, cx1, -cy0}});
    b.push_back({"coil_left_top", Region::CoilPositive, {-cx1, cy0, -cx0, cy1}});
    b.push_back({"coil_left_bottom", Region::CoilPositive, {-cx1, -cy1, -cx0, -cy0}});
    return b;
}

bool DipoleGeometry::in_gap_air(Point p) const {
    if (!gap().contains(p)) return false;
    for (const auto& s : shims())
        if (s.contains(p)) return false;
    return true;
}

double DipoleGeometry::distance_to_shim(Point p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : shims()) d = std::min(d, s.distance(p));
    return d;
}

// ---------------------------------------------------------------------------
// Mesh

double Mesh::area(std::size_t e) const {
    const auto& t = triangles[e].nodes;
    const Point a = nodes[static_cast<std::size_t>(t[0])];
    const Point b = nodes[static_cast<std::size_t>(t[1])];
    const Point c = nodes[static_cast<std::size_t>(t[2])];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

Point Mesh::centroid(std::size_t e) const {
    const auto& t = triangles[e].nodes;
    Point c;
    for (int n : t) {
        c.x += nodes[static_cast<std::size_t>(n)].x / 3;
        c.y += nodes[static_cast<std::size_t>(n)].y / 3;
    }
    return c;
}

double Mesh::total_area() const {
    double s = 0.0;
    for (std::size_t e = 0; e < triangles.size(); ++e) s += area(e);
    return s;
}

double Mesh::region_area(Region r) const {
    double s = 0.0;
    for (std::size_t e = 0; e < triangles.size(); ++e)
        if (triangles[e].region == r) s += area(e);
    return s;
}

std::size_t Mesh::count(Region r) const {
    return static_cast<std::size_t>(std::count_if(
        triangles.begin(), triangles.end(), [r](const Triangle& t) { return t.region == r; }));
}

void Mesh::validate() const {
    if (boundary.size() != nodes.size())
        throw GeometryError("mesh: boundary flags do not match node count");
    for (std::size_t e = 0; e < triangles.size(); ++e) {
        for (int n : triangles[e].nodes)
            if (n < 0 || static_cast<std::size_t>(n) >= nodes.size())
                throw GeometryError("mesh: element " + std::to_string(e) + " references a missing node");
        if (!is_valid_region(static_cast<int>(triangles[e].region)))
            throw GeometryError("mesh: element " + std::to_string(e) + " has an unknown region tag");
        if (!(area(e) > 0.0))
            throw GeometryError("mesh: element " + std::to_string(e) + " is not positively oriented");
    }
}

std::vector<std::array<int, 3>> Mesh::edge_neighbors() const {
    std::vector<std::array<int, 3>> nb(triangles.size(), {-1, -1, -1});
    std::map<std::pair<int, int>, std::pair<int, int>> edges; // edge -> (element, local edge)
    for (std::size_t e = 0; e < triangles.size(); ++e) {
        const auto& t = triangles[e].nodes;
        for (int k = 0; k < 3; ++k) {
            int a = t[(k + 1) % 3], b = t[(k + 2) % 3];
            if (a > b) std::swap(a, b);
            auto [it, inserted] = edges.try_emplace({a, b}, static_cast<int>(e), k);
            if (!inserted) {
                nb[e][static_cast<std::size_t>(k)] = it->second.first;
                nb[static_cast<std::size_t>(it->second.first)][static_cast<std::size_t>(it->second.second)] =
                    static_cast<int>(e);
            }
        }
    }
    return nb;
}

std::optional<std::size_t> Mesh::locate(Point p, double tol) const {
    for (std::size_t e = 0; e < triangles.size(); ++e) {
        const auto& t = triangles[e].nodes;
        const Point a = nodes[static_cast<std::size_t>(t[0])];
        const Point b = nodes[static_cast<std::size_t>(t[1])];
        const Point c = nodes[static_cast<std::size_t>(t[2])];
        const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        const double l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
        const double l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
        const double l0 = 1.0 - l1 - l2;
        if (l0 >= -tol && l1 >= -tol && l2 >= -tol) return e;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::vector<double> unique_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v)
        if (out.empty() || x - out.back() > 1e-12) out.push_back(x);
    return out;
}

// Subdivides [b_i, b_{i+1}] into pieces no longer than the size chosen by
// `fine(mid)`; returns all node coordinates.
template <class Fine>
std::vector<double> subdivide(const std::vector<double>& breaks, Fine fine, double fine_size,
                              double coarse_size, int refinement) {
    std::vector<double> nodes{breaks.front()};
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double a = breaks[i], b = breaks[i + 1];
        const double size = fine(0.5 * (a + b)) ? fine_size : coarse_size;
        auto pieces = static_cast<int>(std::ceil((b - a) / size - 1e-9));
        pieces = std::max(pieces, 1) << refinement;
        for (int k = 1; k < pieces; ++k) nodes.push_back(a + (b - a) * k / pieces);
        nodes.push_back(b);
    }
    return nodes;
}

} // namespace

Mesh generate_dipole_mesh(const DipoleGeometry& g, int refinement) {
    g.validate();
    if (refinement < 0 || refinement > 6) throw GeometryError("refinement level must lie in [0, 6]");

    const auto blocks = g.blocks();
    const Box outer = g.outer();
    std::vector<double> xb{outer.x0, outer.x1, 0.0}, yb{outer.y0, outer.y1, 0.0};
    for (const auto& b : blocks) {
        xb.insert(xb.end(), {b.box.x0, b.box.x1});
        yb.insert(yb.end(), {b.box.y0, b.box.y1});
    }
    xb = unique_sorted(std::move(xb));
    yb = unique_sorted(std::move(yb));

    const double fine_x = g.pole_width / 2 + g.coil_clearance;
    const double fine_y = g.gap_height / 2 + g.coil_clearance;
    const auto xs = subdivide(xb, [&](double x) { return std::abs(x) < fine_x; }, g.fine_size,
                              g.coarse_size, refinement);
    const auto ys = subdivide(yb, [&](double y) { return std::abs(y) < fine_y; }, g.fine_size,
                              g.coarse_size, refinement);

    Mesh mesh;
    const auto nx = xs.size(), ny = ys.size();
    mesh.nodes.reserve(nx * ny);
    mesh.boundary.reserve(nx * ny);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            mesh.nodes.push_back({xs[i], ys[j]});
            mesh.boundary.push_back(i == 0 || j == 0 || i + 1 == nx || j + 1 == ny ? 1 : 0);
        }

    auto id = [nx](std::size_t i, std::size_t j) { return static_cast<int>(j * nx + i); };
    mesh.triangles.reserve(2 * (nx - 1) * (ny - 1));
    for (std::size_t j = 0; j + 1 < ny; ++j)
        for (std::size_t i = 0; i + 1 < nx; ++i) {
            const Point c{0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])};
            Region region = Region::Air;
            for (const auto& b : blocks)
                if (b.box.contains(c)) region = b.region;
            const int n00 = id(i, j), n10 = id(i + 1, j), n01 = id(i, j + 1), n11 = id(i + 1, j + 1);
            if (c.x * c.y > 0.0) {
                mesh.triangles.push_back({{n00, n10, n11}, region});
                mesh.triangles.push_back({{n00, n11, n01}, region});
            } else {
                mesh.triangles.push_back({{n00, n10, n01}, region});
                mesh.triangles.push_back({{n10, n11, n01}, region});
            }
        }
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// IO

void write_mesh(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write mesh " + path.string());
    out << "nodes " << mesh.nodes.size() << '\n';
    for (std::size_t i = 0; i < mesh.nodes.size(); ++i)
        out << i << ' ' << text::format_double(mesh.nodes[i].x) << ' '
            << text::format_double(mesh.nodes[i].y) << '\n';
    out << "elements " << mesh.triangles.size() << '\n';
    for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
        const auto& t = mesh.triangles[e];
        out << e << ' ' << t.nodes[0] << ' ' << t.nodes[1] << ' ' << t.nodes[2] << ' '
            << static_cast<int>(t.region) << '\n';
    }
    std::vector<std::size_t> bnd;
    for (std::size_t i = 0; i < mesh.boundary.size(); ++i)
        if (mesh.boundary[i]) bnd.push_back(i);
    out << "boundary " << bnd.size() << '\n';
    for (auto i : bnd) out << i << '\n';
}

Mesh read_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open mesh " + path.string());
    std::string line;
    std::size_t row = 0;
    auto next = [&]() -> std::vector<std::string_view> {
        while (std::getline(in, line)) {
            ++row;
            if (!text::is_blank_or_comment(line)) return text::tokens(line);
        }
        throw InputError(path.string() + ": unexpected end of file", static_cast<std::ptrdiff_t>(row));
    };
    auto fail = [&](const std::string& what) {
        throw InputError(path.string() + ":" + std::to_string(row) + ": " + what,
                         static_cast<std::ptrdiff_t>(row));
    };
    auto section = [&](const char* name) -> std::size_t {
        const auto tok = next();
        if (tok.size() != 2 || tok[0] != name) fail(std::string("expected '") + name + " <count>'");
        const auto n = text::parse_int(tok[1]);
        if (!n || *n < 0) fail("bad count");
        return static_cast<std::size_t>(*n);
    };

    Mesh mesh;
    const auto n_nodes = section("nodes");
    mesh.nodes.resize(n_nodes);
    mesh.boundary.assign(n_nodes, 0);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        const auto tok = next();
        if (tok.size() != 3) fail("node line needs `id x y`");
        const auto id = text::parse_int(tok[0]);
        const auto x = text::parse_double(tok[1]);
        const auto y = text::parse_double(tok[2]);
        if (!id || !x || !y || *id < 0 || static_cast<std::size_t>(*id) >= n_nodes) fail("bad node line");
        mesh.nodes[static_cast<std::size_t>(*id)] = {*x, *y};
    }
    const auto n_elem = section("elements");
    mesh.triangles.resize(n_elem);
    for (std::size_t e = 0; e < n_elem; ++e) {
        const auto tok = next();
        if (tok.size() != 5) fail("element line needs `id n1 n2 n3 region`");
        std::array<long long, 5> v{};
        for (std::size_t k = 0; k < 5; ++k) {
            const auto p = text::parse_int(tok[k]);
            if (!p) fail("bad integer in element line");
            v[k] = *p;
        }
        if (v[0] < 0 || static_cast<std::size_t>(v[0]) >= n_elem) fail("element id out of range");
        if (!is_valid_region(static_cast<int>(v[4]))) fail("unknown region tag");
        mesh.triangles[static_cast<std::size_t>(v[0])] = {
            {static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])},
            static_cast<Region>(v[4])};
    }
    const auto n_bnd = section("boundary");
    for (std::size_t i = 0; i < n_bnd; ++i) {
        const auto tok = next();
        const auto id = tok.size() == 1 ? text::parse_int(tok[0]) : std::nullopt;
        if (!id || *id < 0 || static_cast<std::size_t>(*id) >= n_nodes) fail("bad boundary node");
        mesh.boundary[static_cast<std::size_t>(*id)] = 1;
    }
    mesh.validate();
    return mesh;
}

} // namespace bhkle
