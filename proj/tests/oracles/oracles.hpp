#pragma once

// Generated by tests/oracles/generate.py (numpy/scipy). Do not edit.
namespace oracle {

inline constexpr double coupling_entry = 9090.90909090909;
inline constexpr double line_pole = -27777.77777777778;
inline constexpr double local_one_line[] = {-9090.90909090909, 454.5454545454545, -555.5555555555555, -111.11111111111111};
inline constexpr double reference_k[] = {-3.690036011397097, -3.192920065876851, 982.2788452318979};
inline constexpr double qsl_two_units[] = {-9090.90909090909, 454.5454545454545, 9090.90909090909, 0.0, -555.5555555555555, -111.11111111111111, 0.0, 0.0, 9090.90909090909, 0.0, -9090.90909090909, 454.5454545454545, 0.0, 0.0, -555.5555555555555, -111.11111111111111};
inline constexpr double qsl_eigs_re[] = {-18167.83307128249, -125.09622164680309, -55.55555555555492, -55.55555555555492};
inline constexpr double qsl_eigs_im[] = {0.0, 0.0, -499.4385175095788, 499.4385175095788};
inline constexpr double closed_loop_poles_re[] = {-8926.664155465032, -2035.5493925107435, -13.651135087120537};
inline constexpr double closed_loop_poles_im[] = {0.0, 0.0, 0.0};
inline constexpr double f_num[] = {248050213.4423993};
inline constexpr double f_den[] = {1.0, 10975.864683062897, 18320312.456801556, 248050213.44239816};
inline constexpr double gd_num[] = {-454.5454545454577, -856797.9964335635, 0.0};
inline constexpr double full_two_units_eigs_re[] = {-27777.77777777778, -13881.92804978363, -13881.92804978363, -125.03278932166015, -55.55555555556083, -55.55555555556083};
inline constexpr double full_two_units_eigs_im[] = {0.0, -17669.468902779547, 17669.468902779547, 0.0, -499.43851750957873, 499.43851750957873};

}  // namespace oracle
