/* Permissions probe entry point. The probe logic ships with the web asset
 * bundle; this file is replaced by that build when it is present. */
