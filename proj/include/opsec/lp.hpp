#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <utility>
#include <vector>

namespace opsec::lp {

enum class Sense { Le, Ge, Eq };
enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };
const char* status_name(Status s);

struct Column {
    double cost = 0.0;
    std::vector<std::pair<int, double>> entries;  // (row, coefficient)
};

struct Problem {
    std::vector<Sense> sense;
    std::vector<double> rhs;
    std::vector<Column> cols;

    int add_row(Sense s, double b) {
        sense.push_back(s);
        rhs.push_back(b);
        return static_cast<int>(rhs.size()) - 1;
    }
    int add_col(Column c) {
        cols.push_back(std::move(c));
        return static_cast<int>(cols.size()) - 1;
    }
};

// Dense two-phase tableau simplex, min c'x s.t. rows, x >= 0.
// Columns may be appended after a solve (primal reoptimization) and bound
// rows added (dual simplex), which is what column generation and
// branch-and-bound need.
class Tableau {
public:
    explicit Tableau(const Problem& p, size_t iteration_limit = 2'000'000);

    Status solve();
    Status reoptimize();  // after add_column

    int add_column(const Column& c);  // returns structural index
    // x_j <= v (Le) or x_j >= v (Ge); runs the dual simplex.
    Status add_bound(int j, Sense s, double v);

    double value(int j) const;
    double objective() const { return z2_; }
    double reduced_cost(int j) const { return r2_(cols_[j]); }
    double dual(int row) const;  // in the original row orientation
    size_t rows() const { return static_cast<size_t>(m_); }
    size_t structurals() const { return cols_.size(); }
    size_t pivots() const { return pivots_; }

private:
    enum class Kind : uint8_t { Structural, Slack, Artificial };

    int new_column(Kind k, double c2, double c1);
    void pivot(int r, int j);
    Status primal(bool phase1);
    Status dual_simplex();
    void drive_out_artificials();
    bool eligible(int j) const;

    int m_ = 0;
    int n_ = 0;  // used tableau columns
    Eigen::MatrixXd T_;
    Eigen::VectorXd rhs_;
    Eigen::RowVectorXd r2_, r1_;
    double z2_ = 0.0, z1_ = 0.0;
    std::vector<double> c2_;
    std::vector<Kind> kind_;
    std::vector<int> basis_;      // column basic in each row
    std::vector<int> row_of_;     // row where a column is basic, or -1
    std::vector<int> idcol_;      // identity column per row
    std::vector<double> flip_;    // row orientation relative to the input
    std::vector<int> cols_;       // structural index -> tableau column
    bool phase1_done_ = false;
    size_t limit_;
    size_t pivots_ = 0;
};

} // namespace opsec::lp
