#include "opsec/lp.hpp"

#include <cmath>

namespace opsec::lp {

namespace {
constexpr double EPS_RC = 1e-9;
constexpr double EPS_PIV = 1e-9;
constexpr double EPS_FEAS = 1e-9;
} // namespace

const char* status_name(Status s) {
    switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration_limit";
    }
    return "?";
}

Tableau::Tableau(const Problem& p, size_t iteration_limit) : limit_(iteration_limit) {
    m_ = static_cast<int>(p.rhs.size());
    int cap = static_cast<int>(p.cols.size()) + 2 * m_ + 8;
    T_ = Eigen::MatrixXd::Zero(m_, cap);
    r2_ = Eigen::RowVectorXd::Zero(cap);
    r1_ = Eigen::RowVectorXd::Zero(cap);
    rhs_ = Eigen::VectorXd::Zero(m_);
    basis_.assign(m_, -1);
    idcol_.assign(m_, -1);
    flip_.assign(m_, 1.0);
    std::vector<Sense> sense = p.sense;
    for (int i = 0; i < m_; ++i) {
        if (p.rhs[i] < 0) {
            flip_[i] = -1.0;
            if (sense[i] == Sense::Le) sense[i] = Sense::Ge;
            else if (sense[i] == Sense::Ge) sense[i] = Sense::Le;
        }
        rhs_(i) = flip_[i] * p.rhs[i];
    }
    for (auto& c : p.cols) {
        int j = new_column(Kind::Structural, c.cost, 0.0);
        for (auto [row, v] : c.entries) T_(row, j) += flip_[row] * v;
        r2_(j) = c.cost;
        cols_.push_back(j);
    }
    for (int i = 0; i < m_; ++i) {
        if (sense[i] == Sense::Le) {
            int s = new_column(Kind::Slack, 0.0, 0.0);
            T_(i, s) = 1.0;
            basis_[i] = s;
            idcol_[i] = s;
        } else {
            if (sense[i] == Sense::Ge) {
                int s = new_column(Kind::Slack, 0.0, 0.0);
                T_(i, s) = -1.0;
            }
            int a = new_column(Kind::Artificial, 0.0, 1.0);
            T_(i, a) = 1.0;
            basis_[i] = a;
            idcol_[i] = a;
        }
    }
    row_of_.assign(n_, -1);
    for (int i = 0; i < m_; ++i) row_of_[basis_[i]] = i;
    bool any_art = false;
    for (int i = 0; i < m_; ++i) {
        if (kind_[basis_[i]] != Kind::Artificial) continue;
        any_art = true;
        r1_.head(n_) -= T_.row(i).head(n_);
        z1_ += rhs_(i);
    }
    for (int i = 0; i < m_; ++i)
        if (kind_[basis_[i]] == Kind::Artificial) r1_(basis_[i]) = 0.0;
    phase1_done_ = !any_art;
}

int Tableau::new_column(Kind k, double c2, double c1) {
    if (n_ >= T_.cols()) {
        int cap = std::max<int>(16, static_cast<int>(T_.cols()) * 2);
        Eigen::MatrixXd grown = Eigen::MatrixXd::Zero(T_.rows(), cap);
        grown.leftCols(n_) = T_.leftCols(n_);
        T_.swap(grown);
        Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(cap), b = Eigen::RowVectorXd::Zero(cap);
        a.head(n_) = r2_.head(n_);
        b.head(n_) = r1_.head(n_);
        r2_.swap(a);
        r1_.swap(b);
    }
    int j = n_++;
    T_.col(j).setZero();
    r2_(j) = c2;
    r1_(j) = c1;
    c2_.push_back(c2);
    kind_.push_back(k);
    row_of_.push_back(-1);
    return j;
}

bool Tableau::eligible(int j) const { return row_of_[j] < 0 && kind_[j] != Kind::Artificial; }

void Tableau::pivot(int r, int j) {
    ++pivots_;
    double piv = T_(r, j);
    T_.row(r).head(n_) /= piv;
    rhs_(r) /= piv;
    Eigen::VectorXd f = T_.col(j);
    f(r) = 0.0;
    Eigen::RowVectorXd prow = T_.row(r).head(n_);
    T_.leftCols(n_).noalias() -= f * prow;
    rhs_.noalias() -= f * rhs_(r);
    double f2 = r2_(j);
    r2_.head(n_) -= f2 * prow;
    z2_ += f2 * rhs_(r);
    if (!phase1_done_) {
        double f1 = r1_(j);
        r1_.head(n_) -= f1 * prow;
        z1_ += f1 * rhs_(r);
    }
    T_.col(j).setZero();
    T_(r, j) = 1.0;
    r2_(j) = 0.0;
    r1_(j) = 0.0;
    for (int i = 0; i < m_; ++i)
        if (rhs_(i) < 0 && rhs_(i) > -EPS_FEAS) rhs_(i) = 0.0;
    row_of_[basis_[r]] = -1;
    basis_[r] = j;
    row_of_[j] = r;
}

Status Tableau::primal(bool phase1) {
    const Eigen::RowVectorXd& rc = phase1 ? r1_ : r2_;
    int degenerate = 0;
    for (;;) {
        if (pivots_ >= limit_) return Status::IterationLimit;
        bool bland = degenerate > 50;
        int j = -1;
        double best = -EPS_RC;
        for (int c = 0; c < n_; ++c) {
            if (!eligible(c) || rc(c) >= -EPS_RC) continue;
            if (bland) {
                j = c;
                break;
            }
            if (rc(c) < best) {
                best = rc(c);
                j = c;
            }
        }
        if (j < 0) return Status::Optimal;
        int r = -1;
        double best_ratio = 0.0;
        for (int i = 0; i < m_; ++i) {
            double a = T_(i, j);
            if (a <= EPS_PIV) continue;
            double ratio = rhs_(i) / a;
            if (r < 0 || ratio < best_ratio - 1e-12) {
                r = i;
                best_ratio = ratio;
            } else if (ratio <= best_ratio + 1e-12) {
                if (bland ? basis_[i] < basis_[r] : a > T_(r, j)) r = i;
            }
        }
        if (r < 0) return Status::Unbounded;
        degenerate = rhs_(r) <= 1e-12 ? degenerate + 1 : 0;
        pivot(r, j);
    }
}

void Tableau::drive_out_artificials() {
    for (int r = 0; r < m_; ++r) {
        if (kind_[basis_[r]] != Kind::Artificial) continue;
        for (int j = 0; j < n_; ++j) {
            if (eligible(j) && std::abs(T_(r, j)) > 1e-7) {
                pivot(r, j);
                break;
            }
        }
    }
}

Status Tableau::solve() {
    if (!phase1_done_) {
        Status st = primal(true);
        if (st == Status::IterationLimit) return st;
        double scale = 1.0 + rhs_.cwiseAbs().sum();
        if (z1_ > 1e-9 * scale) return Status::Infeasible;
        phase1_done_ = true;
        drive_out_artificials();
    }
    return primal(false);
}

Status Tableau::reoptimize() { return phase1_done_ ? primal(false) : solve(); }

int Tableau::add_column(const Column& c) {
    int j = new_column(Kind::Structural, c.cost, 0.0);
    double rc = c.cost;
    for (auto [row, v] : c.entries) {
        double a = flip_[row] * v;
        T_.col(j).noalias() += a * T_.col(idcol_[row]);
        rc += a * r2_(idcol_[row]);
    }
    r2_(j) = rc;
    cols_.push_back(j);
    return static_cast<int>(cols_.size()) - 1;
}

Status Tableau::add_bound(int var, Sense s, double v) {
    int col = cols_[var];
    double alpha = s == Sense::Le ? 1.0 : -1.0;
    double beta = alpha * v;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(T_.cols());
    row(col) = alpha;
    if (row_of_[col] >= 0) {
        int k = row_of_[col];
        row.head(n_) -= alpha * T_.row(k).head(n_);
        beta -= alpha * rhs_(k);
        row(col) = 0.0;
    }
    Eigen::MatrixXd grown(m_ + 1, T_.cols());
    grown.topRows(m_) = T_;
    grown.row(m_) = row;
    T_.swap(grown);
    rhs_.conservativeResize(m_ + 1);
    rhs_(m_) = beta;
    ++m_;
    int sl = new_column(Kind::Slack, 0.0, 0.0);
    T_(m_ - 1, sl) = 1.0;
    basis_.push_back(sl);
    row_of_[sl] = m_ - 1;
    idcol_.push_back(sl);
    flip_.push_back(1.0);
    Status st = dual_simplex();
    if (st != Status::Optimal) return st;
    return primal(false);
}

Status Tableau::dual_simplex() {
    for (;;) {
        if (pivots_ >= limit_) return Status::IterationLimit;
        int r = -1;
        double worst = -EPS_FEAS * 10;
        for (int i = 0; i < m_; ++i)
            if (rhs_(i) < worst) {
                worst = rhs_(i);
                r = i;
            }
        if (r < 0) return Status::Optimal;
        int j = -1;
        double best = 0.0;
        for (int c = 0; c < n_; ++c) {
            double a = T_(r, c);
            if (!eligible(c) || a >= -EPS_PIV) continue;
            double ratio = std::max(0.0, r2_(c)) / -a;
            if (j < 0 || ratio < best - 1e-12 || (ratio <= best + 1e-12 && -a > -T_(r, j))) {
                j = c;
                best = ratio;
            }
        }
        if (j < 0) return Status::Infeasible;
        pivot(r, j);
    }
}

double Tableau::value(int j) const {
    int r = row_of_[cols_[j]];
    return r < 0 ? 0.0 : rhs_(r);
}

double Tableau::dual(int row) const { return -flip_[row] * r2_(idcol_[row]); }

} // namespace opsec::lp
