document.addEventListener("DOMContentLoaded", function () {
  var slots = document.querySelectorAll(".adsbygoogle");
  for (var i = 0; i < slots.length; i++) {
    (window.adsbygoogle = window.adsbygoogle || []).push({});
  }
});
