/// @file grid.cpp
/// @brief Grid construction, BC validation, field storage and sampling.

#include "stagdg/grid.hpp"

#include <cmath>

namespace stagdg {

// ============================================================================
// FaceSpec
// ============================================================================

const BoundaryCondition& FaceSpec::resolve(double x, double y, double z) const {
    STAGDG_REQUIRE(!regions.empty(), "FaceSpec::resolve on an empty face");
    for (const auto& r : regions)
        if (!r.where || r.where(x, y, z)) return r.bc;
    // No region matched: fall back to the last entry (faces are expected to
    // end with an unconditional default).
    return regions.back().bc;
}

// ============================================================================
// StaggeredGrid
// ============================================================================

int StaggeredGrid::binding_count(Binding b, int axis) const {
    const int n = count(axis);
    if (normal_axis(b) != axis) return n;
    return periodic[axis] ? n : n + 1;
}

double StaggeredGrid::coord(Binding b, int axis, int i, double xi) const {
    const double d = spacing(axis), a = lo(axis);
    if (normal_axis(b) != axis) return a + (i + xi) * d;
    if (!periodic[axis]) {
        const int n = count(axis);
        if (i == 0) return a + xi * 0.5 * d;
        if (i == n) return hi(axis) - 0.5 * d + xi * 0.5 * d;
        return a + (i - 0.5 + xi) * d;
    }
    double x = a + (i - 0.5 + xi) * d;
    const double L = hi(axis) - a;
    if (x < a) x += L;
    if (x >= hi(axis)) x -= L;
    return x;
}

double StaggeredGrid::volume(Binding b, int i, int j, int k) const {
    const int ids[3] = {i, j, k};
    double v = 1.0;
    for (int axis = 0; axis < 3; ++axis) v *= slab_width(b, axis, ids[axis]);
    return v;
}

bool StaggeredGrid::pressure_nullspace() const {
    const int nfaces = dim == 2 ? 4 : 6;
    for (int f = 0; f < nfaces; ++f)
        if (faces[f].has_kind(BCKind::pressure)) return false;
    return true;
}

namespace {
const char* face_name(int f) {
    static const char* names[6] = {"x-min", "x-max", "y-min", "y-max", "z-min", "z-max"};
    return names[f];
}
}  // namespace

StaggeredGrid make_grid(int dim, std::array<int, 3> counts, std::array<double, 6> box,
                        std::array<FaceSpec, 6> faces) {
    if (dim != 2 && dim != 3) throw config_error("grid: dim must be 2 or 3");
    StaggeredGrid g;
    g.dim = dim;
    if (dim == 2) {
        counts[2] = 1;
        box[4] = 0.0;
        box[5] = 1.0;
        faces[4] = FaceSpec(BoundaryCondition::make_periodic());
        faces[5] = FaceSpec(BoundaryCondition::make_periodic());
    }
    g.nx = counts[0];
    g.ny = counts[1];
    g.nz = counts[2];
    g.x0 = box[0]; g.x1 = box[1];
    g.y0 = box[2]; g.y1 = box[3];
    g.z0 = box[4]; g.z1 = box[5];
    g.faces = std::move(faces);

    for (int axis = 0; axis < 3; ++axis) {
        const bool active = axis < dim;
        const FaceSpec& fmin = g.faces[2 * axis];
        const FaceSpec& fmax = g.faces[2 * axis + 1];
        if (active && fmin.regions.empty())
            throw config_error(std::string("grid: no boundary condition on face ") + face_name(2 * axis));
        if (active && fmax.regions.empty())
            throw config_error(std::string("grid: no boundary condition on face ") + face_name(2 * axis + 1));
        const bool pmin = !fmin.regions.empty() && fmin.is_periodic();
        const bool pmax = !fmax.regions.empty() && fmax.is_periodic();
        if (active && pmin != pmax)
            throw config_error(std::string("grid: periodic must be set on both ") + face_name(2 * axis) +
                               " and " + face_name(2 * axis + 1) + " or neither");
        g.periodic[axis] = pmin && pmax;
        if (!active) g.periodic[axis] = true;  // inert z direction wraps trivially

        const int n = axis == 0 ? g.nx : axis == 1 ? g.ny : g.nz;
        if (active) {
            if (g.periodic[axis] && n < 3)
                throw config_error(std::string("grid: periodic direction ") + face_name(2 * axis) +
                                   " needs at least 3 elements, got " + std::to_string(n));
            if (!g.periodic[axis] && n < 1)
                throw config_error(std::string("grid: direction ") + face_name(2 * axis) +
                                   " needs at least 1 element, got " + std::to_string(n));
        }
        const double a = axis == 0 ? g.x0 : axis == 1 ? g.y0 : g.z0;
        const double b2 = axis == 0 ? g.x1 : axis == 1 ? g.y1 : g.z1;
        if (active && !(b2 > a))
            throw config_error(std::string("grid: degenerate box along ") + face_name(2 * axis));
    }
    g.dx = (g.x1 - g.x0) / g.nx;
    g.dy = (g.y1 - g.y0) / g.ny;
    g.dz = (g.z1 - g.z0) / g.nz;
    return g;
}

void set_solid_mask(StaggeredGrid& g, const std::function<bool(double, double, double)>& inside) {
    g.solid.assign(size_t(g.nx) * g.ny * g.nz, 0);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double x = g.x0 + (i + 0.5) * g.dx;
                const double y = g.y0 + (j + 0.5) * g.dy;
                const double z = g.z0 + (k + 0.5) * g.dz;
                if (inside(x, y, z)) g.solid[(size_t(k) * g.ny + j) * g.nx + i] = 1;
            }
}

// ============================================================================
// Fields
// ============================================================================

Field make_field(const StaggeredGrid& g, Binding b, int N, int M) {
    Field f;
    f.binding = b;
    f.N = N;
    f.M = M;
    f.nx = g.binding_count(b, 0);
    f.ny = g.binding_count(b, 1);
    f.nz = g.binding_count(b, 2);
    f.mx = N + 1;
    f.my = g.dim >= 2 ? N + 1 : 1;
    f.mz = g.dim == 3 ? N + 1 : 1;
    f.mt = M >= 0 ? M + 1 : 1;
    f.a.assign(size_t(f.nx) * f.ny * f.nz * f.npe(), 0.0);
    return f;
}

namespace {

template <typename SampleFn>
void project_nodal(const StaggeredGrid& g, Field& f, const Basis1D& basis, SampleFn&& sample) {
    // z reference node for inert z: midpoint of the (degree-0) z basis
    for (int k = 0; k < f.nz; ++k)
        for (int j = 0; j < f.ny; ++j)
            for (int i = 0; i < f.nx; ++i) {
                double* e = f.at(i, j, k);
                for (int it = 0; it < f.mt; ++it)
                    for (int kz = 0; kz < f.mz; ++kz)
                        for (int jy = 0; jy < f.my; ++jy)
                            for (int ix = 0; ix < f.mx; ++ix) {
                                const double xi = basis.nodes[ix];
                                const double eta = f.my > 1 ? basis.nodes[jy] : 0.5;
                                const double zeta = f.mz > 1 ? basis.nodes[kz] : 0.5;
                                const double x = g.coord(f.binding, 0, i, xi);
                                const double y = g.coord(f.binding, 1, j, eta);
                                const double z = g.coord(f.binding, 2, k, zeta);
                                const double val = sample(x, y, z, it);
                                if (!std::isfinite(val))
                                    throw config_error("project_field: non-finite sample at element (" +
                                                       std::to_string(i) + "," + std::to_string(j) + "," +
                                                       std::to_string(k) + ")");
                                e[f.local(ix, jy, kz, it)] = val;
                            }
            }
}

}  // namespace

Field project_field(const StaggeredGrid& g, Binding b, int N,
                    const std::function<double(double, double, double)>& f) {
    Field out = make_field(g, b, N);
    const Basis1D basis = gauss_legendre(N);
    project_nodal(g, out, basis, [&](double x, double y, double z, int) { return f(x, y, z); });
    return out;
}

Field project_field_spacetime(const StaggeredGrid& g, Binding b, int N, int M, double t0, double dt,
                              const std::function<double(double, double, double, double)>& f) {
    Field out = make_field(g, b, N, M);
    const Basis1D basis = gauss_legendre(N);
    const Basis1D tbasis = gauss_legendre(M);
    project_nodal(g, out, basis, [&](double x, double y, double z, int it) {
        return f(x, y, z, t0 + dt * tbasis.nodes[it]);
    });
    return out;
}

double eval_local(const Field& f, const Basis1D& basis, int i, int j, int k,
                  double xi, double eta, double zeta) {
    STAGDG_REQUIRE(f.M < 0, "eval_local expects a spatial field");
    const auto vx = eval_basis(basis, xi);
    const auto vy = eval_basis(basis, eta);
    const auto vz = eval_basis(basis, zeta);
    const double* e = f.at(i, j, k);
    double s = 0.0;
    for (int kz = 0; kz < f.mz; ++kz)
        for (int jy = 0; jy < f.my; ++jy)
            for (int ix = 0; ix < f.mx; ++ix) {
                double w = vx[ix];
                if (f.my > 1) w *= vy[jy];
                if (f.mz > 1) w *= vz[kz];
                s += w * e[f.local(ix, jy, kz)];
            }
    return s;
}

namespace {

/// Locate (element, reference coordinate) along one axis for a binding.
void locate(const StaggeredGrid& g, Binding b, int axis, double x, int& i, double& xi) {
    const double a = g.lo(axis), d = g.spacing(axis);
    const int n = g.count(axis);
    if (g.normal_axis(b) != axis) {
        double r = (x - a) / d;
        i = int(std::floor(r));
        if (i < 0) i = 0;
        if (i > n - 1) i = n - 1;
        xi = r - i;
    } else if (!g.periodic[axis]) {
        if (x <= a + 0.5 * d) {
            i = 0;
            xi = (x - a) / (0.5 * d);
        } else if (x >= g.hi(axis) - 0.5 * d) {
            i = n;
            xi = (x - (g.hi(axis) - 0.5 * d)) / (0.5 * d);
        } else {
            const double r = (x - a) / d;
            i = int(std::floor(r + 0.5));
            xi = r - (i - 0.5);
        }
    } else {
        const double r = (x - a) / d;
        i = int(std::floor(r + 0.5));
        xi = r - (i - 0.5);
        if (i >= n) i -= n;
        if (i < 0) i += n;
    }
    if (xi < 0.0) xi = 0.0;
    if (xi > 1.0) xi = 1.0;
}

}  // namespace

double eval_at(const StaggeredGrid& g, const Field& f, const Basis1D& basis,
               double x, double y, double z) {
    int i, j, k;
    double xi, eta, zeta;
    locate(g, f.binding, 0, x, i, xi);
    locate(g, f.binding, 1, y, j, eta);
    if (g.dim == 3) {
        locate(g, f.binding, 2, z, k, zeta);
    } else {
        k = 0;
        zeta = 0.5;
    }
    return eval_local(f, basis, i, j, k, xi, eta, zeta);
}

FlowState make_state(const StaggeredGrid& g, int N) {
    FlowState s;
    s.u = make_field(g, Binding::dual_x, N);
    s.v = make_field(g, Binding::dual_y, N);
    s.w = make_field(g, Binding::dual_z, N);
    s.p = make_field(g, Binding::main, N);
    return s;
}

}  // namespace stagdg
