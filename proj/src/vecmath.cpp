// SPDX-License-Identifier: Apache-2.0
#include "vecmath.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace glaff::vec {

namespace {

using Packet = Eigen::internal::packet_traits<double>::type;
constexpr std::size_t kLanes = sizeof(Packet) / sizeof(double);

// Piecewise polynomial for erf on [0, 6): interval i covers [i/4, (i+1)/4)
// and is evaluated in t = 8 (x - (i + 1/2) / 4). Row 24 is the constant 1.
// Generated by tools/gen_erf_table.py.
constexpr std::size_t kIntervals = 24;
constexpr std::size_t kDegree = 11;
constexpr double kErfTable[kIntervals + 1][kDegree + 1] = {
    {0.1403162048013338, 0.1388606586995828, -0.0021696977921808885, -0.0007006315787251024, 1.6774193541980957e-05, 3.179371815557804e-06, -8.645169667209156e-08, -1.1442074745128188e-08, 3.3414549129107043e-10, 3.360239765163169e-11, -1.0252625851406037e-12, -8.245395339924584e-14},
    {0.4041169094348223, 0.12254410119323848, -0.005744254743432903, -0.0004587425663158363, 4.0669772351644615e-05, 1.3877975480039373e-06, -1.9114171396769607e-07, -2.603003642595487e-09, 6.704728689163889e-10, 9.243920623365876e-13, -1.8582060222843585e-12, 1.3401766890778021e-14},
    {0.623240882188418, 0.09543744197007561, -0.007456050153912136, -0.00010873406474455862, 4.308101895546627e-05, -8.365909138019988e-07, -1.5771802289402592e-07, 6.632808678417547e-09, 3.985246866835841e-10, -2.7070021436237965e-11, -6.822605388626769e-13, 7.838995906718953e-14},
    {0.7840750610598597, 0.06559313066126853, -0.007174248666076343, 0.00018149140970728412, 2.7440567001923767e-05, -2.051265789265372e-06, -3.954996881766602e-08, 8.867133413364567e-09, -1.1002950562205671e-10, -2.4265340313784366e-11, 8.280848790674492e-13, 4.524974583516264e-14},
    {0.8883882317017078, 0.03978424481259616, -0.005594659426771407, 0.0003172897128608775, 6.829418246412466e-06, -1.8714503053853236e-06, 5.926832011356136e-08, 4.5809242981716195e-09, -3.594842305711558e-10, -2.683941228597052e-12, 1.0678977886467218e-12, -2.0331637998610266e-14},
    {0.9481700727820903, 0.02129497171093945, -0.0036600732628177036, 0.0003084720837033899, -7.44643811625217e-06, -9.340202719098881e-07, 8.453840427735196e-08, -6.766615308650493e-10, -2.539787705572661e-10, 1.1756099185845867e-11, 3.026048920285712e-13, -3.9249233942200877e-14},
    {0.9784437332399837, 0.010059032377813895, -0.002043240951743403, 0.00022429808524747756, -1.213839432647202e-05, -6.515273561103687e-08, 5.498802839391163e-08, -2.9488856998333765e-09, -3.4367893760458413e-11, 1.0510448086331344e-11, -3.277046349444395e-13, -1.4652033675887058e-14},
    {0.9919900576701199, 0.004193228553027009, -0.0009827879421156868, 0.00013172088390856195, -1.0317353884730989e-05, 3.4981028336737476e-07, 1.5660047051481654e-08, -2.3500414116079078e-09, 8.526277170530837e-11, 2.699147998543055e-12, -3.617866917928605e-13, 8.470147376713666e-15},
    {0.9973459706405177, 0.001542602576791712, -0.000409753809460306, 6.452618200447048e-05, -6.435749123108172e-06, 3.81331866199993e-07, -6.948138016037177e-09, -8.913313452895706e-10, 8.245455171499696e-11, -2.1589760561526444e-12, -1.1498871243132852e-13, 1.0996057945111492e-14},
    {0.9992170617821089, 0.0005008097327087774, -0.0001486778893979289, 2.6817448252146644e-05, -3.2063509675234706e-06, 2.5504738872385085e-07, -1.1879269338687624e-08, 5.877954916581834e-11, 3.54128119818199e-11, -2.5147974606864638e-12, 5.004295449218429e-14, 3.6967519659776476e-15},
    {0.9997946242638588, 0.00014348439073533437, -4.708081571003503e-05, 9.55161390148981e-06, -1.3218490738499485e-06, 1.2871950078174443e-07, -8.570991094848198e-09, 3.246632218811128e-10, 2.0653151495378548e-12, -1.1369872646843324e-12, 6.858422954131458e-14, -1.1794968538247609e-15},
    {0.9999521451602562, 3.6278535357812254e-05, -1.3037598644212754e-05, 2.9346406368543554e-06, -4.5941407984143526e-07, 5.2284645989341785e-08, -4.349039500540943e-09, 2.520418402368131e-10, -8.082966068105025e-12, -1.2025265883760025e-13, 3.118307226151689e-14, -1.7178317566448054e-15},
    {0.9999901032653747, 8.094835404339122e-06, -3.162045079818578e-06, 7.812886384721581e-07, -1.361264524271068e-07, 1.7607467696664697e-08, -1.7254454019619143e-09, 1.270680658165109e-10, -6.631963421856127e-12, 1.89624682965292e-13, 3.726406448058838e-15, -7.432848352940366e-16},
    {0.9999981847185726, 1.5939675999706364e-06, -6.724550812370649e-07, 1.8082607701486857e-07, -3.4640630411934556e-08, 4.997984145272667e-09, -5.585055331250673e-10, 4.872617416997605e-11, -3.2691450428028675e-12, 1.5844065530348347e-13, -4.240744236307976e-15, -7.874806507340548e-17},
    {0.9999997048598075, 2.769900355791392e-07, -1.2551110987175643e-07, 3.647215800512073e-08, -7.609519601265931e-09, 1.2082621871110599e-09, -1.5079160079104721e-10, 1.5027103634295717e-11, -1.1974104465503718e-12, 7.491788590634045e-14, -3.4597748997314872e-15, 9.291700058541411e-17},
    {0.999999957486056, 4.247779772261443e-08, -2.057518327195969e-08, 6.422831068409358e-09, -1.448366985708714e-09, 2.5051408300559976e-10, -3.4412727277356585e-11, 3.830503130356635e-12, -3.4862224905045625e-13, 2.5888231214602163e-14, -1.5453524037209312e-15, 6.936736323948631e-17},
    {0.9999999945765992, 5.748744786057546e-09, -2.964196530355653e-09, 9.890011782016683e-10, -2.395383421376591e-10, 4.476884013510741e-11, -6.6965701992165704e-12, 8.199972822152857e-13, -8.327692858433849e-14, 7.051200687205653e-15, -4.996472013145656e-16, 2.8569395210603526e-17},
    {0.9999999993875167, 6.865896536066726e-10, -3.754787168328677e-10, 1.3331729439410163e-10, -3.4498329173967795e-11, 6.921584723273979e-12, -1.1180050094020383e-12, 1.4893824673618281e-13, -1.6617724995571504e-14, 1.5671351258735772e-15, -1.2667234616978696e-16, 8.510306219552225e-18},
    {0.9999999999387839, 7.236601708233996e-11, -4.183660363027206e-11, 1.5747617975362906e-11, -4.334146790730056e-12, 9.284544954330905e-13, -1.6086219975083904e-13, 2.3116891674737838e-14, -2.802075581945417e-15, 2.8978726416055484e-16, -2.6111209708213273e-17, 1.9843233880153647e-18},
    {0.9999999999945866, 6.731088115123468e-12, -4.101756821121118e-12, 1.631280957649424e-12, -4.756675887118504e-13, 1.0829734729216555e-13, -2.001599859105526e-14, 3.0820310905321856e-15, -4.0241732460626e-16, 4.513686634236853e-17, -4.465910054793249e-18, 3.755058493318513e-19},
    {0.9999999999995766, 5.525213586671564e-13, -3.539589955633583e-13, 1.4829227221931463e-13, -4.565633005814465e-14, 1.1004314912153303e-14, -2.159653369768001e-15, 3.5435409550196026e-16, -4.950496779982736e-17, 5.9721264856020514e-18, -6.41955749741083e-19, 5.885880404617712e-20},
    {0.9999999999999707, 4.0024512978069356e-14, -2.6891469681053013e-14, 1.1836676447374106e-14, -3.8363234769458565e-15, 9.75527566714834e-16, -2.0249403855129792e-16, 3.5242293334409396e-17, -5.239311248438939e-18, 6.753483893348142e-19, -7.824075101015583e-20, 7.741540492699459e-21},
    {0.9999999999999982, 2.558681510526373e-15, -1.799072939955779e-15, 8.299889733033292e-16, -2.8242279338997996e-16, 7.554084389664932e-17, -1.652826656184744e-17, 3.0393642095591847e-18, -4.786473133987153e-19, 6.557411033479526e-20, -8.136986217436161e-21, 8.620662810763087e-22},
    {0.9999999999999999, 1.4435093304341487e-16, -1.060077167444858e-16, 5.1147783430751315e-17, -1.8228699808717013e-17, 5.1149260210886926e-18, -1.1761528455858193e-18, 2.277516103501888e-19, -3.7847788624851776e-20, 5.486605598528119e-21, -7.255873208524533e-22, 8.18034648346034e-23},
    {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}
};

}  // namespace

namespace {

// Below this the packet exp clamps its argument; the library handles the
// subnormal range and underflow to zero.
constexpr double kExpClampLow = -708.0;

inline void exp_packet(const double* x, double* y) {
  namespace ei = Eigen::internal;
  alignas(64) double in[kLanes];
  ei::pstore(in, ei::ploadu<Packet>(x));
  ei::pstoreu(y, ei::pexp(ei::pload<Packet>(in)));
  for (std::size_t j = 0; j < kLanes; ++j) {
    if (in[j] < kExpClampLow) y[j] = std::exp(in[j]);
  }
}

}  // namespace

void exp(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) exp_packet(x + i, y + i);
  if (i < n) {
    // The tail goes through the same packet code on a padded copy.
    alignas(64) double buf[kLanes] = {};
    std::copy(x + i, x + n, buf);
    exp_packet(buf, buf);
    std::copy(buf, buf + (n - i), y + i);
  }
}

namespace {

// Scalar reference; the vector path below performs the same operations in
// the same order, so both give identical bits.
double erf_one(double v) {
  const double a = std::fabs(v);
  const double clamped = a < 6.0 ? a : 6.0;  // NaN takes the constant row
  const double rowd = std::floor(clamped * 4.0);
  const double t = (clamped - (rowd + 0.5) * 0.25) * 8.0;
  const double* c = kErfTable[static_cast<std::size_t>(rowd)];
  double r = c[kDegree];
  for (std::size_t k = kDegree; k-- > 0;) r = r * t + c[k];
  return v != v ? v : std::copysign(r, v);
}

}  // namespace

void erf(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
#if defined(__AVX2__)
  const double* table = &kErfTable[0][0];
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d six = _mm256_set1_pd(6.0);
  const __m256d four = _mm256_set1_pd(4.0);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d quarter = _mm256_set1_pd(0.25);
  const __m256d eight = _mm256_set1_pd(8.0);
  const __m128i stride = _mm_set1_epi32(static_cast<int>(kDegree + 1));
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d a = _mm256_andnot_pd(sign, v);
    const __m256d clamped = _mm256_min_pd(a, six);  // second operand on NaN, as in erf_one
    const __m256d rowd = _mm256_floor_pd(_mm256_mul_pd(clamped, four));
    const __m256d t =
        _mm256_mul_pd(_mm256_sub_pd(clamped, _mm256_mul_pd(_mm256_add_pd(rowd, half), quarter)), eight);
    const __m128i base = _mm_mullo_epi32(_mm256_cvttpd_epi32(rowd), stride);
    __m256d r = _mm256_i32gather_pd(table + kDegree, base, 8);
    for (std::size_t k = kDegree; k-- > 0;) {
      r = _mm256_add_pd(_mm256_mul_pd(r, t), _mm256_i32gather_pd(table + k, base, 8));
    }
    r = _mm256_or_pd(r, _mm256_and_pd(v, sign));
    const __m256d nan = _mm256_cmp_pd(v, v, _CMP_UNORD_Q);
    _mm256_storeu_pd(y + i, _mm256_blendv_pd(r, v, nan));
  }
#endif
  for (; i < n; ++i) y[i] = erf_one(x[i]);
}

}  // namespace glaff::vec
