/// @file grid.hpp
/// @brief Cartesian main grid, the three edge-based staggered dual grids,
///        boundary-condition descriptors, and DOF storage.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stagdg/basis.hpp"
#include "stagdg/util.hpp"

namespace stagdg {

// ============================================================================
// Boundary conditions
// ============================================================================

enum class BCKind {
    periodic,
    wall,         ///< no-slip, zero velocity
    moving_wall,  ///< no-penetration with prescribed tangential velocity
    inflow,       ///< fully prescribed velocity vector
    pressure,     ///< prescribed pressure (outlet/inlet head)
    symmetry,     ///< zero normal velocity, zero tangential stress
};

using VelocityFn = std::function<std::array<double, 3>(double, double, double, double)>;
using ScalarFn = std::function<double(double, double, double, double)>;

struct BoundaryCondition {
    BCKind kind = BCKind::wall;
    VelocityFn velocity;  ///< moving_wall/inflow data; null means zero
    ScalarFn pressure;    ///< pressure data; null means zero

    std::array<double, 3> velocity_at(double x, double y, double z, double t) const {
        if (!velocity) return {0.0, 0.0, 0.0};
        return velocity(x, y, z, t);
    }
    double pressure_at(double x, double y, double z, double t) const {
        return pressure ? pressure(x, y, z, t) : 0.0;
    }

    static BoundaryCondition make_periodic() { return {BCKind::periodic, nullptr, nullptr}; }
    static BoundaryCondition make_wall() { return {BCKind::wall, nullptr, nullptr}; }
    static BoundaryCondition make_moving_wall(VelocityFn v) { return {BCKind::moving_wall, std::move(v), nullptr}; }
    static BoundaryCondition make_inflow(VelocityFn v) { return {BCKind::inflow, std::move(v), nullptr}; }
    static BoundaryCondition make_pressure(ScalarFn p) { return {BCKind::pressure, nullptr, std::move(p)}; }
    static BoundaryCondition make_symmetry() { return {BCKind::symmetry, nullptr, nullptr}; }
};

/// One face of the domain box. A face usually carries a single condition;
/// a list of (region predicate, condition) pairs supports mixed faces such
/// as a plate that starts midway along the bottom (predicate on position,
/// first match wins, last entry should be the unconditional default).
struct FaceSpec {
    struct Region {
        std::function<bool(double, double, double)> where;  ///< null = everywhere
        BoundaryCondition bc;
    };
    std::vector<Region> regions;

    FaceSpec() = default;
    /*implicit*/ FaceSpec(BoundaryCondition bc) { regions.push_back({nullptr, std::move(bc)}); }

    bool is_periodic() const {
        return regions.size() == 1 && regions[0].bc.kind == BCKind::periodic;
    }
    bool has_kind(BCKind k) const {
        for (const auto& r : regions)
            if (r.bc.kind == k) return true;
        return false;
    }
    const BoundaryCondition& resolve(double x, double y, double z) const;
};

// ============================================================================
// StaggeredGrid
// ============================================================================

/// Faces are indexed 0..5 as {x-min, x-max, y-min, y-max, z-min, z-max}.
enum class Binding { main, dual_x, dual_y, dual_z };

struct StaggeredGrid {
    int dim = 2;
    int nx = 0, ny = 0, nz = 1;                   ///< main-grid element counts
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1, z0 = 0, z1 = 1;
    double dx = 0, dy = 0, dz = 0;
    std::array<FaceSpec, 6> faces;
    std::array<bool, 3> periodic = {false, false, false};
    std::vector<std::uint8_t> solid;  ///< main-cell solid mask; empty = all fluid

    int count(int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    double spacing(int axis) const { return axis == 0 ? dx : axis == 1 ? dy : dz; }
    double lo(int axis) const { return axis == 0 ? x0 : axis == 1 ? y0 : z0; }
    double hi(int axis) const { return axis == 0 ? x1 : axis == 1 ? y1 : z1; }
    bool axis_active(int axis) const { return axis < dim; }

    /// Element count along `axis` for fields bound to `b`. Dual grids in
    /// their normal direction have count+1 slabs when the direction is not
    /// periodic (two half-width end slabs) and count slabs when periodic.
    int binding_count(Binding b, int axis) const;

    /// Dual-normal axis of a binding (-1 for main).
    static int normal_axis(Binding b) {
        switch (b) {
            case Binding::dual_x: return 0;
            case Binding::dual_y: return 1;
            case Binding::dual_z: return 2;
            default: return -1;
        }
    }

    /// True when slab `i` of the dual grid normal to `axis` is a half-width
    /// end slab (never true on periodic directions).
    bool is_half_slab(int axis, int i) const {
        return !periodic[axis] && (i == 0 || i == count(axis));
    }

    /// Width of slab i along `axis` for the given binding.
    double slab_width(Binding b, int axis, int i) const {
        if (normal_axis(b) == axis && is_half_slab(axis, i)) return 0.5 * spacing(axis);
        return spacing(axis);
    }

    /// Physical coordinate of reference point xi in slab i along `axis`.
    double coord(Binding b, int axis, int i, double xi) const;

    /// Volume of element (i,j,k) for the binding.
    double volume(Binding b, int i, int j, int k) const;

    bool is_solid(int i, int j, int k) const {
        if (solid.empty()) return false;
        return solid[(size_t(k) * ny + j) * nx + i] != 0;
    }
    bool any_solid() const { return !solid.empty(); }

    /// True when the pressure system has a constant nullspace (no pressure-
    /// Dirichlet region anywhere on the boundary).
    bool pressure_nullspace() const;
};

/// counts: main-grid element counts per direction (z ignored when dim==2).
/// box: {x0,x1,y0,y1,z0,z1} (z entries ignored when dim==2).
/// faces: 6 face specs (z faces ignored when dim==2).
StaggeredGrid make_grid(int dim, std::array<int, 3> counts, std::array<double, 6> box,
                        std::array<FaceSpec, 6> faces);

/// Mark main cells whose centers satisfy the predicate as solid obstacles.
void set_solid_mask(StaggeredGrid& g, const std::function<bool(double, double, double)>& inside);

// ============================================================================
// Fields
// ============================================================================

struct Field {
    Binding binding = Binding::main;
    int N = 0;   ///< spatial degree
    int M = -1;  ///< temporal degree, -1 for purely spatial fields
    int nx = 0, ny = 0, nz = 0;   ///< element counts for this binding
    int mx = 1, my = 1, mz = 1, mt = 1;  ///< nodes per element per axis
    std::vector<double> a;

    int npe() const { return mx * my * mz * mt; }
    size_t elem(int i, int j, int k) const {
        return ((size_t(k) * ny + j) * nx + i) * size_t(npe());
    }
    double* at(int i, int j, int k) { return a.data() + elem(i, j, k); }
    const double* at(int i, int j, int k) const { return a.data() + elem(i, j, k); }
    int local(int ix, int jy, int kz, int it = 0) const {
        return ix + mx * (jy + my * (kz + mz * it));
    }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }
};

Field make_field(const StaggeredGrid& g, Binding b, int N, int M = -1);

/// Nodal projection (interpolation at the mapped Gauss nodes) of f(x,y,z).
Field project_field(const StaggeredGrid& g, Binding b, int N,
                    const std::function<double(double, double, double)>& f);

/// Space-time variant over the slab [t0, t0+dt]: f(x,y,z,t).
Field project_field_spacetime(const StaggeredGrid& g, Binding b, int N, int M, double t0, double dt,
                              const std::function<double(double, double, double, double)>& f);

/// Evaluate a spatial field at reference point (xi,eta,zeta) of element (i,j,k).
double eval_local(const Field& f, const Basis1D& basis, int i, int j, int k,
                  double xi, double eta, double zeta);

/// Evaluate a spatial field at a physical point (locates the element; points
/// outside the domain are clamped to it).
double eval_at(const StaggeredGrid& g, const Field& f, const Basis1D& basis,
               double x, double y, double z);

// ============================================================================
// FlowState
// ============================================================================

struct FlowState {
    Field u, v, w, p;
    double t = 0.0;
    long step = 0;
};

FlowState make_state(const StaggeredGrid& g, int N);

}  // namespace stagdg
