#include "safeode/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "safeode/dynamics.hpp"
#include "safeode/io.hpp"

namespace safeode::model {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Saturation the plant applies before the actuators; also keeps every tan()
// evaluation away from the steering singularity on exploratory trial stages
// of the adaptive solver, where the integrated control can leave its box.
ControlPair clamp_control(const double* u, const ControlBounds& b) {
    return {std::clamp(u[0], b.u_min.u1, b.u_max.u1),
            std::clamp(u[1], b.u_min.u2, b.u_max.u2)};
}

hocbf::ObstacleDisk disk_at(const hocbf::ObstacleDisk& d0, double vx, double t) {
    hocbf::ObstacleDisk d = d0;
    d.cx += vx * t;
    return d;
}

int ray_count(const neuralnet::MLPSpec& spec) {
    if (spec.widths.empty() || spec.widths.front() < 5 || spec.widths.back() != 2)
        throw std::invalid_argument("model: network must map >=5 inputs to 2 outputs");
    return spec.widths.front() - 4;
}

void assemble_input(const double* scan, int n_rays, const double* z,
                    const InputNorms& n, double* in) {
    for (int i = 0; i < n_rays; ++i) in[i] = scan[i] * n.lidar;
    in[n_rays + 0] = z[2] * n.theta;
    in[n_rays + 1] = z[3] * n.v;
    in[n_rays + 2] = z[4] * n.u1;
    in[n_rays + 3] = z[5] * n.u2;
}

}  // namespace

SynthResult integrate_synthesized(const ModelCheckpoint& ckpt,
                                  const VehicleState& s0, const ControlPair& u0,
                                  const ScanFn& scan, double t0, double t1,
                                  const SynthOptions& opt) {
    const int n_rays = ray_count(ckpt.spec);
    if (static_cast<std::ptrdiff_t>(ckpt.params.size()) !=
        neuralnet::param_count(ckpt.spec))
        throw std::invalid_argument("model: checkpoint parameter count mismatch");
    if (!(opt.obs_dt > 0.0)) throw std::invalid_argument("model: obs_dt must be > 0");

    neuralnet::MLPParams net{ckpt.spec, ckpt.params};
    SynthResult out;
    out.min_b = out.min_psi1 = out.min_psi2 =
        std::numeric_limits<double>::infinity();

    std::vector<double> z = {s0.x, s0.y, s0.theta, s0.v, u0.u1, u0.u2};
    std::vector<double> input(ckpt.spec.widths.front());
    std::vector<double> held(n_rays);
    std::array<double, 2> y{};

    // Control law at (t, z) under the currently held scan.
    auto control = [&](double t, const double* zz,
                       std::array<double, 2>& udot) {
        const auto t_start = Clock::now();
        assemble_input(held.data(), n_rays, zz, norms_of(ckpt), input.data());
        neuralnet::forward(net, input.data(), y.data());
        if (opt.filter == RateFilter::qp) {
            const ControlPair uc = clamp_control(zz + 4, opt.bounds);
            hocbf::BarrierStack st{disk_at(opt.obstacle, opt.obstacle_vx, t),
                                   ckpt.gains, ckpt.theta_p, 2, opt.obstacle_vx};
            AugmentedState a{{zz[0], zz[1], zz[2], zz[3]}, uc};
            diffqp::QPProblem prob;
            prob.y = y;
            prob.rows.push_back(hocbf::lifted_constraint(a, st, opt.wheelbase));
            for (const auto& r :
                 hocbf::bound_rows({zz[4], zz[5]}, opt.bounds, opt.bound_kappa))
                prob.rows.push_back(r);
            const auto sol = diffqp::solve(prob);  // throws qp_infeasible
            udot = sol.y_hat;
        } else {
            udot = y;
        }
        ++out.control_evals;
        out.control_seconds += seconds_since(t_start);
    };

    odeint::Field field = [&](double t, const double* zz, double* dz) {
        std::array<double, 2> udot{};
        control(t, zz, udot);
        const ControlPair uc = clamp_control(zz + 4, opt.bounds);
        const VehicleState f =
            dynamics::bicycle_flow({zz[0], zz[1], zz[2], zz[3]}, uc, opt.wheelbase);
        dz[0] = f.x;
        dz[1] = f.y;
        dz[2] = f.theta;
        dz[3] = f.v;
        dz[4] = udot[0];
        dz[5] = udot[1];
    };

    auto record = [&](double t, const std::vector<double>& zz) {
        TrajRow row;
        row.t = t;
        row.x = zz[0];
        row.y = zz[1];
        row.theta = zz[2];
        row.v = zz[3];
        row.u1 = zz[4];
        row.u2 = zz[5];
        const ControlPair uc = clamp_control(zz.data() + 4, opt.bounds);
        hocbf::BarrierStack st{disk_at(opt.obstacle, opt.obstacle_vx, t),
                               ckpt.gains, ckpt.theta_p, 2, opt.obstacle_vx};
        AugmentedState a{{zz[0], zz[1], zz[2], zz[3]}, uc};
        const auto psi = hocbf::psi_chain(a, st, opt.wheelbase);
        row.b = psi[0];
        row.psi1 = psi[1];
        row.psi2 = psi[2];
        if (opt.filter == RateFilter::qp) {
            diffqp::QPProblem prob;
            assemble_input(held.data(), n_rays, zz.data(), norms_of(ckpt),
                           input.data());
            neuralnet::forward(net, input.data(), y.data());
            prob.y = y;
            prob.rows.push_back(hocbf::lifted_constraint(a, st, opt.wheelbase));
            for (const auto& r :
                 hocbf::bound_rows({zz[4], zz[5]}, opt.bounds, opt.bound_kappa))
                prob.rows.push_back(r);
            const auto t_qp = Clock::now();
            const auto res = diffqp::try_solve(prob);
            row.qp_time_s = seconds_since(t_qp);
            if (res.feasible)
                row.qp_active =
                    std::find(res.sol.active_set.begin(), res.sol.active_set.end(),
                              0) != res.sol.active_set.end()
                        ? 1
                        : 0;
        }
        out.rows.push_back(row);
        out.min_b = std::min(out.min_b, row.b);
        out.min_psi1 = std::min(out.min_psi1, row.psi1);
        out.min_psi2 = std::min(out.min_psi2, row.psi2);
    };

    double t = t0;
    held = scan(t0, {z[0], z[1], z[2], z[3]});
    if (static_cast<int>(held.size()) != n_rays)
        throw std::invalid_argument("model: scan size does not match the network input");
    out.traj.times.push_back(t0);
    out.traj.states.push_back(z);
    record(t0, z);
    while (t < t1 - 1e-12) {
        const double t_seg = std::min(t + opt.obs_dt, t1);
        if (t > t0) {
            held = scan(t, {z[0], z[1], z[2], z[3]});
            if (static_cast<int>(held.size()) != n_rays)
                throw std::invalid_argument(
                    "model: scan size does not match the network input");
        }
        odeint::Trajectory seg;
        try {
            seg = odeint::integrate(field, z, t, t_seg, opt.solver);
        } catch (const diffqp::qp_infeasible&) {
            out.qp_infeasible = true;
            out.traj.truncated = true;
            out.traj.failure = "safety QP infeasible";
            break;
        }
        for (std::size_t i = 1; i < seg.times.size(); ++i) {
            out.traj.times.push_back(seg.times[i]);
            out.traj.states.push_back(seg.states[i]);
            record(seg.times[i], seg.states[i]);
        }
        out.traj.diag.accepted += seg.diag.accepted;
        out.traj.diag.rejected += seg.diag.rejected;
        out.traj.diag.max_err_ratio =
            std::max(out.traj.diag.max_err_ratio, seg.diag.max_err_ratio);
        z = seg.states.back();
        t = t_seg;
    }
    out.t_end = out.traj.times.empty() ? t0 : out.traj.times.back();
    return out;
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajRow>& rows) {
    std::ostringstream ss;
    ss << "t,x,y,theta,v,u1,u2,b,psi1,psi2,qp_active,qp_time_s\n";
    for (const auto& row : rows) {
        ss << fmt_double(row.t) << ',' << fmt_double(row.x) << ','
           << fmt_double(row.y) << ',' << fmt_double(row.theta) << ','
           << fmt_double(row.v) << ',' << fmt_double(row.u1) << ','
           << fmt_double(row.u2) << ',' << fmt_double(row.b) << ','
           << fmt_double(row.psi1) << ',' << fmt_double(row.psi2) << ','
           << row.qp_active << ',' << fmt_double(row.qp_time_s) << '\n';
    }
    write_text_file(path, ss.str());
}

std::vector<TrajRow> read_trajectory_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) ||
        line != "t,x,y,theta,v,u1,u2,b,psi1,psi2,qp_active,qp_time_s")
        throw std::runtime_error("trajectory csv: unexpected header in " + path);
    std::vector<TrajRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<double, 12> f{};
        std::size_t pos = 0;
        for (int i = 0; i < 12; ++i) {
            std::size_t next = line.find(',', pos);
            const std::string cell = line.substr(
                pos, next == std::string::npos ? std::string::npos : next - pos);
            f[i] = std::stod(cell);
            if (i < 11 && next == std::string::npos)
                throw std::runtime_error("trajectory csv: short row in " + path);
            pos = next + 1;
        }
        rows.push_back({f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8],
                        f[9], static_cast<int>(f[10]), f[11]});
    }
    return rows;
}

TapedRollout::TapedRollout(const SynthOptions& opt, const InputNorms& norms)
    : opt_(opt), norms_(norms) {}

bool TapedRollout::eval_stage(const neuralnet::MLPParams& net,
                              const std::array<double, 3>& gains, double theta_p,
                              const std::array<double, 6>& z, const double* scan,
                              double t, StageTape& st,
                              std::array<double, 6>& dz) {
    for (double c : z)
        if (!std::isfinite(c)) return false;
    if (!(std::fabs(z[4]) < dynamics::kSteerLimit)) return false;

    st.z = z;
    const int n_rays = net.spec.widths.front() - 4;
    std::vector<double> input(net.spec.widths.front());
    assemble_input(scan, n_rays, z.data(), norms_, input.data());
    std::array<double, 2> y{};
    neuralnet::forward_taped(net, input.data(), st.tape, y.data());

    hocbf::BarrierStack stk{disk_at(opt_.obstacle, opt_.obstacle_vx, t), gains,
                            theta_p, 2, opt_.obstacle_vx};
    AugmentedState a{{z[0], z[1], z[2], z[3]}, {z[4], z[5]}};
    auto [row, jac] = hocbf::lifted_constraint_grad(a, stk, opt_.wheelbase);
    st.jac = jac;
    st.prob = diffqp::QPProblem{};
    st.prob.y = y;
    st.prob.rows.push_back(row);
    for (const auto& r :
         hocbf::bound_rows({z[4], z[5]}, opt_.bounds, opt_.bound_kappa))
        st.prob.rows.push_back(r);
    const auto res = diffqp::try_solve(st.prob);
    if (!res.feasible) return false;
    st.sol = res.sol;

    const VehicleState f =
        dynamics::bicycle_flow({z[0], z[1], z[2], z[3]}, {z[4], z[5]},
                               opt_.wheelbase);
    dz = {f.x, f.y, f.theta, f.v, st.sol.y_hat[0], st.sol.y_hat[1]};
    return true;
}

bool TapedRollout::forward(const neuralnet::MLPParams& net,
                           const std::array<double, 3>& gains, double theta_p,
                           const VehicleState& s0, const ControlPair& u0,
                           const std::vector<std::vector<double>>& scans,
                           double dt, int n_sub) {
    const int n_rays = net.spec.widths.front() - 4;
    if (n_sub < 1 || !(dt > 0.0))
        throw std::invalid_argument("TapedRollout: bad step sizes");
    for (const auto& s : scans)
        if (static_cast<int>(s.size()) != n_rays)
            throw std::invalid_argument("TapedRollout: scan size mismatch");

    z_pts_.clear();
    sub_z_.clear();
    stages_.clear();
    dt_ = dt;
    n_sub_ = n_sub;
    const int n_coarse = static_cast<int>(scans.size());
    z_pts_.reserve(n_coarse + 1);
    sub_z_.reserve(n_coarse * n_sub);
    stages_.resize(static_cast<std::size_t>(n_coarse) * n_sub * 4);

    const double h = dt / n_sub;
    std::array<double, 6> z{s0.x, s0.y, s0.theta, s0.v, u0.u1, u0.u2};
    z_pts_.push_back(z);
    std::array<double, 6> k1{}, k2{}, k3{}, k4{}, zs{};
    for (int k = 0; k < n_coarse; ++k) {
        const double* scan = scans[k].data();
        for (int j = 0; j < n_sub; ++j) {
            const double t = (k * n_sub + j) * h;
            const std::size_t base = (static_cast<std::size_t>(k) * n_sub + j) * 4;
            sub_z_.push_back(z);
            if (!eval_stage(net, gains, theta_p, z, scan, t, stages_[base], k1))
                return false;
            for (int i = 0; i < 6; ++i) zs[i] = z[i] + 0.5 * h * k1[i];
            if (!eval_stage(net, gains, theta_p, zs, scan, t + 0.5 * h,
                            stages_[base + 1], k2))
                return false;
            for (int i = 0; i < 6; ++i) zs[i] = z[i] + 0.5 * h * k2[i];
            if (!eval_stage(net, gains, theta_p, zs, scan, t + 0.5 * h,
                            stages_[base + 2], k3))
                return false;
            for (int i = 0; i < 6; ++i) zs[i] = z[i] + h * k3[i];
            if (!eval_stage(net, gains, theta_p, zs, scan, t + h,
                            stages_[base + 3], k4))
                return false;
            for (int i = 0; i < 6; ++i)
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for (double c : z)
            if (!std::isfinite(c)) return false;
        z_pts_.push_back(z);
    }
    return true;
}

void TapedRollout::stage_vjp(const neuralnet::MLPParams& net,
                             const StageTape& st,
                             const std::array<double, 6>& gdz,
                             std::array<double, 6>& gz, SynthGrads& grads,
                             std::vector<double>& gin_buf) const {
    // Flow slots 0..3 of dz.
    VehicleState gs{};
    ControlPair gu{};
    dynamics::flow_vjp({st.z[0], st.z[1], st.z[2], st.z[3]},
                       {st.z[4], st.z[5]}, opt_.wheelbase,
                       {gdz[0], gdz[1], gdz[2], gdz[3]}, gs, gu);
    gz[0] += gs.x;
    gz[1] += gs.y;
    gz[2] += gs.theta;
    gz[3] += gs.v;
    gz[4] += gu.u1;
    gz[5] += gu.u2;

    // Projected-rate slots 4..5 pull back through the QP.
    const auto qpg = diffqp::backward(st.prob, st.sol, {gdz[4], gdz[5]});

    std::fill(gin_buf.begin(), gin_buf.end(), 0.0);
    neuralnet::backward(net, st.tape, qpg.d_y.data(), grads.params.data(),
                        gin_buf.data());
    const int n_rays = net.spec.widths.front() - 4;
    gz[2] += gin_buf[n_rays + 0] * norms_.theta;
    gz[3] += gin_buf[n_rays + 1] * norms_.v;
    gz[4] += gin_buf[n_rays + 2] * norms_.u1;
    gz[5] += gin_buf[n_rays + 3] * norms_.u2;

    // Safety row coefficients: slots are (x, y, theta, v, u1, u2, p1, p2).
    const auto& da = qpg.d_a[0];
    const double dc = qpg.d_c[0];
    for (int k = 0; k < 6; ++k)
        gz[k] += da[0] * st.jac.da[0][k] + da[1] * st.jac.da[1][k] +
                 dc * st.jac.dc[k];
    grads.gains[0] +=
        da[0] * st.jac.da[0][6] + da[1] * st.jac.da[1][6] + dc * st.jac.dc[6];
    grads.gains[1] +=
        da[0] * st.jac.da[0][7] + da[1] * st.jac.da[1][7] + dc * st.jac.dc[7];
    grads.gains[2] += dc * st.jac.dc_dp3;
    grads.theta_p += dc * st.jac.dc_dthetap;

    // Box rows: c = u - u_min for the lower pair, u_max - u for the upper;
    // the coefficient vectors are constant.
    gz[4] += qpg.d_c[1] - qpg.d_c[3];
    gz[5] += qpg.d_c[2] - qpg.d_c[4];
}

SynthGrads TapedRollout::backward(
    const neuralnet::MLPParams& net,
    const std::vector<std::array<double, 2>>& upstream) const {
    const int n_coarse = static_cast<int>(z_pts_.size()) - 1;
    if (n_coarse < 0 || sub_z_.size() != static_cast<std::size_t>(n_coarse) * n_sub_)
        throw std::logic_error("TapedRollout: backward without a forward pass");
    if (upstream.size() != static_cast<std::size_t>(n_coarse))
        throw std::invalid_argument("TapedRollout: upstream size mismatch");

    SynthGrads grads;
    grads.params.assign(neuralnet::param_count(net.spec), 0.0);
    std::vector<double> gin_buf(net.spec.widths.front());

    const double h = dt_ / n_sub_;
    std::array<double, 6> gz{};
    std::array<double, 6> gk1{}, gk2{}, gk3{}, gk4{}, gstage{};
    for (int k = n_coarse - 1; k >= 0; --k) {
        gz[4] += upstream[k][0];
        gz[5] += upstream[k][1];
        for (int j = n_sub_ - 1; j >= 0; --j) {
            const std::size_t base = (static_cast<std::size_t>(k) * n_sub_ + j) * 4;
            for (int i = 0; i < 6; ++i) {
                gk1[i] = h / 6.0 * gz[i];
                gk2[i] = h / 3.0 * gz[i];
                gk3[i] = h / 3.0 * gz[i];
                gk4[i] = h / 6.0 * gz[i];
            }
            gstage.fill(0.0);
            stage_vjp(net, stages_[base + 3], gk4, gstage, grads, gin_buf);
            for (int i = 0; i < 6; ++i) {
                gz[i] += gstage[i];
                gk3[i] += h * gstage[i];
            }
            gstage.fill(0.0);
            stage_vjp(net, stages_[base + 2], gk3, gstage, grads, gin_buf);
            for (int i = 0; i < 6; ++i) {
                gz[i] += gstage[i];
                gk2[i] += 0.5 * h * gstage[i];
            }
            gstage.fill(0.0);
            stage_vjp(net, stages_[base + 1], gk2, gstage, grads, gin_buf);
            for (int i = 0; i < 6; ++i) {
                gz[i] += gstage[i];
                gk1[i] += 0.5 * h * gstage[i];
            }
            gstage.fill(0.0);
            stage_vjp(net, stages_[base], gk1, gstage, grads, gin_buf);
            for (int i = 0; i < 6; ++i) gz[i] += gstage[i];
        }
    }
    return grads;
}

}  // namespace safeode::model
