// Fused CPU convolution kernels behind svlab.tensor's conv ops.
//
// All kernels take pre-padded, C-contiguous float64 inputs and write into a
// pre-allocated output. Accumulation order per output element is fixed and
// threads only partition conflict-free output slices, so results are
// bit-identical for any thread count.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>

#include <cstring>

namespace py = pybind11;

namespace {

constexpr int TB = 256;  // output-time tile, keeps accumulators in L1

template <int CB>
void conv2d_fwd_block(const double* xp, const double* w, double* out,
                      long b, long co0, long Co, long Ci, long Fo, long To,
                      long Fp, long Tp, long KF, long KT, long sF, long sT) {
    double acc[CB][TB];
    for (long fo = 0; fo < Fo; fo++) {
        for (long to0 = 0; to0 < To; to0 += TB) {
            const long tb = To - to0 < TB ? To - to0 : TB;
            for (int c = 0; c < CB; c++) std::memset(acc[c], 0, sizeof(double) * tb);
            for (long ci = 0; ci < Ci; ci++) {
                const double* xbase = xp + (b * Ci + ci) * Fp * Tp;
                for (long kf = 0; kf < KF; kf++) {
                    const double* xrow = xbase + (fo * sF + kf) * Tp + to0 * sT;
                    for (long kt = 0; kt < KT; kt++) {
                        double wv[CB];
                        for (int c = 0; c < CB; c++)
                            wv[c] = w[(((co0 + c) * Ci + ci) * KF + kf) * KT + kt];
                        const double* xr = xrow + kt;
                        if (sT == 1) {
                            for (long t = 0; t < tb; t++) {
                                const double xv = xr[t];
                                for (int c = 0; c < CB; c++) acc[c][t] += wv[c] * xv;
                            }
                        } else {
                            for (long t = 0; t < tb; t++) {
                                const double xv = xr[t * sT];
                                for (int c = 0; c < CB; c++) acc[c][t] += wv[c] * xv;
                            }
                        }
                    }
                }
            }
            for (int c = 0; c < CB; c++)
                std::memcpy(out + ((b * Co + co0 + c) * Fo + fo) * To + to0,
                            acc[c], sizeof(double) * tb);
        }
    }
}

template <int CB>
void conv1d_fwd_block(const double* xp, const double* w, double* out,
                      long b, long co0, long Co, long Ci, long To,
                      long Tp, long K, long dil) {
    double acc[CB][TB];
    for (long to0 = 0; to0 < To; to0 += TB) {
        const long tb = To - to0 < TB ? To - to0 : TB;
        for (int c = 0; c < CB; c++) std::memset(acc[c], 0, sizeof(double) * tb);
        for (long ci = 0; ci < Ci; ci++) {
            const double* xrow = xp + (b * Ci + ci) * Tp + to0;
            for (long k = 0; k < K; k++) {
                double wv[CB];
                for (int c = 0; c < CB; c++)
                    wv[c] = w[((co0 + c) * Ci + ci) * K + k];
                const double* xr = xrow + k * dil;
                for (long t = 0; t < tb; t++) {
                    const double xv = xr[t];
                    for (int c = 0; c < CB; c++) acc[c][t] += wv[c] * xv;
                }
            }
        }
        for (int c = 0; c < CB; c++)
            std::memcpy(out + ((b * Co + co0 + c)) * To + to0,
                        acc[c], sizeof(double) * tb);
    }
}

}  // namespace

// out[b,co,fo,to] = sum_{ci,kf,kt} w[co,ci,kf,kt] * xp[b,ci,fo*sF+kf,to*sT+kt]
void conv2d_fwd(py::array_t<double> xp_, py::array_t<double> w_,
                py::array_t<double> out_, long sF, long sT, int nthreads) {
    const auto xb = xp_.request(), wb = w_.request(), ob = out_.request();
    const double* xp = static_cast<const double*>(xb.ptr);
    const double* w = static_cast<const double*>(wb.ptr);
    double* out = static_cast<double*>(ob.ptr);
    const long B = ob.shape[0], Co = ob.shape[1], Fo = ob.shape[2], To = ob.shape[3];
    const long Ci = xb.shape[1], Fp = xb.shape[2], Tp = xb.shape[3];
    const long KF = wb.shape[2], KT = wb.shape[3];
    const long nblk = (Co + 7) / 8;
    py::gil_scoped_release rel;
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (long b = 0; b < B; b++) {
        for (long blk = 0; blk < nblk; blk++) {
            long co0 = blk * 8;
            long rem = Co - co0;
            if (rem >= 8)
                conv2d_fwd_block<8>(xp, w, out, b, co0, Co, Ci, Fo, To, Fp, Tp, KF, KT, sF, sT);
            else {
                for (; rem >= 4; rem -= 4, co0 += 4)
                    conv2d_fwd_block<4>(xp, w, out, b, co0, Co, Ci, Fo, To, Fp, Tp, KF, KT, sF, sT);
                for (; rem > 0; rem--, co0++)
                    conv2d_fwd_block<1>(xp, w, out, b, co0, Co, Ci, Fo, To, Fp, Tp, KF, KT, sF, sT);
            }
        }
    }
}

// dw[co,ci,kf,kt] = sum_{b,fo,to} dout[b,co,fo,to] * xp[b,ci,fo*sF+kf,to*sT+kt]
void conv2d_dw(py::array_t<double> xp_, py::array_t<double> dout_,
               py::array_t<double> dw_, long sF, long sT, int nthreads) {
    const auto xb = xp_.request(), db = dout_.request(), wb = dw_.request();
    const double* xp = static_cast<const double*>(xb.ptr);
    const double* dout = static_cast<const double*>(db.ptr);
    double* dw = static_cast<double*>(wb.ptr);
    const long B = db.shape[0], Co = db.shape[1], Fo = db.shape[2], To = db.shape[3];
    const long Ci = xb.shape[1], Fp = xb.shape[2], Tp = xb.shape[3];
    const long KF = wb.shape[2], KT = wb.shape[3];
    py::gil_scoped_release rel;
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (long co = 0; co < Co; co++) {
        for (long ci = 0; ci < Ci; ci++) {
            for (long kf = 0; kf < KF; kf++) {
                for (long kt = 0; kt < KT; kt++) {
                    double s = 0.0;
                    for (long b = 0; b < B; b++) {
                        const double* dbase = dout + (b * Co + co) * Fo * To;
                        const double* xbase = xp + (b * Ci + ci) * Fp * Tp;
                        for (long fo = 0; fo < Fo; fo++) {
                            const double* dr = dbase + fo * To;
                            const double* xr = xbase + (fo * sF + kf) * Tp + kt;
                            if (sT == 1) {
                                for (long to = 0; to < To; to++) s += dr[to] * xr[to];
                            } else {
                                for (long to = 0; to < To; to++) s += dr[to] * xr[to * sT];
                            }
                        }
                    }
                    dw[((co * Ci + ci) * KF + kf) * KT + kt] = s;
                }
            }
        }
    }
}

// out[b,co,to] = sum_{ci,k} w[co,ci,k] * xp[b,ci,to+k*dil]
void conv1d_fwd(py::array_t<double> xp_, py::array_t<double> w_,
                py::array_t<double> out_, long dil, int nthreads) {
    const auto xb = xp_.request(), wb = w_.request(), ob = out_.request();
    const double* xp = static_cast<const double*>(xb.ptr);
    const double* w = static_cast<const double*>(wb.ptr);
    double* out = static_cast<double*>(ob.ptr);
    const long B = ob.shape[0], Co = ob.shape[1], To = ob.shape[2];
    const long Ci = xb.shape[1], Tp = xb.shape[2], K = wb.shape[2];
    const long nblk = (Co + 7) / 8;
    py::gil_scoped_release rel;
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (long b = 0; b < B; b++) {
        for (long blk = 0; blk < nblk; blk++) {
            long co0 = blk * 8;
            long rem = Co - co0;
            if (rem >= 8)
                conv1d_fwd_block<8>(xp, w, out, b, co0, Co, Ci, To, Tp, K, dil);
            else {
                for (; rem >= 4; rem -= 4, co0 += 4)
                    conv1d_fwd_block<4>(xp, w, out, b, co0, Co, Ci, To, Tp, K, dil);
                for (; rem > 0; rem--, co0++)
                    conv1d_fwd_block<1>(xp, w, out, b, co0, Co, Ci, To, Tp, K, dil);
            }
        }
    }
}

// dw[co,ci,k] = sum_{b,to} dout[b,co,to] * xp[b,ci,to+k*dil]
void conv1d_dw(py::array_t<double> xp_, py::array_t<double> dout_,
               py::array_t<double> dw_, long dil, int nthreads) {
    const auto xb = xp_.request(), db = dout_.request(), wb = dw_.request();
    const double* xp = static_cast<const double*>(xb.ptr);
    const double* dout = static_cast<const double*>(db.ptr);
    double* dw = static_cast<double*>(wb.ptr);
    const long B = db.shape[0], Co = db.shape[1], To = db.shape[2];
    const long Ci = xb.shape[1], Tp = xb.shape[2], K = wb.shape[2];
    py::gil_scoped_release rel;
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads)
    for (long co = 0; co < Co; co++) {
        for (long ci = 0; ci < Ci; ci++) {
            for (long k = 0; k < K; k++) {
                double s = 0.0;
                for (long b = 0; b < B; b++) {
                    const double* dr = dout + (b * Co + co) * To;
                    const double* xr = xp + (b * Ci + ci) * Tp + k * dil;
                    for (long to = 0; to < To; to++) s += dr[to] * xr[to];
                }
                dw[(co * Ci + ci) * K + k] = s;
            }
        }
    }
}

PYBIND11_MODULE(_kernels, m) {
    m.doc() = "fused float64 convolution kernels";
    m.def("conv2d_fwd", &conv2d_fwd);
    m.def("conv2d_dw", &conv2d_dw);
    m.def("conv1d_fwd", &conv1d_fwd);
    m.def("conv1d_dw", &conv1d_dw);
}
